use std::f64::consts::PI;

use super::{Constraint, LinExpr, MilpError, Relation, VarId};

/// Exact linearization of `z = x·y` for binary `x` and bounded `y`:
///
/// ```text
/// x·lo <= z <= x·hi
/// y + (x - 1)·hi <= z <= y + (x - 1)·lo
/// ```
pub fn linearize_product_bin_cont(
    name: &str,
    x: VarId,
    y: &LinExpr,
    (lo, hi): (f64, f64),
    z: VarId,
) -> Result<[Constraint; 4], MilpError> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(MilpError::UnboundedFactor(name.to_string()));
    }
    let zx_lo = LinExpr::var(z).with(x, -lo);
    let zx_hi = LinExpr::var(z).with(x, -hi);
    // z - y - x·hi >= -hi   and   z - y - x·lo <= -lo
    let zy_hi = LinExpr::var(z).plus(y, -1.0).with(x, -hi);
    let zy_lo = LinExpr::var(z).plus(y, -1.0).with(x, -lo);
    Ok([
        Constraint::new(format!("{name}:xlo"), zx_lo, Relation::Ge, 0.0),
        Constraint::new(format!("{name}:xhi"), zx_hi, Relation::Le, 0.0),
        Constraint::new(format!("{name}:yhi"), zy_hi, Relation::Ge, -hi),
        Constraint::new(format!("{name}:ylo"), zy_lo, Relation::Le, -lo),
    ])
}

/// Radius scale of an `n`-gon with the same area as its circumscribing
/// circle's reference: `sqrt((2π/n) / sin(2π/n))`.
pub fn polygon_scale(n: usize) -> f64 {
    let theta = 2.0 * PI / n as f64;
    (theta / theta.sin()).sqrt()
}

/// The six half-planes of the hexagonal apparent-power limit for one phase,
/// with vertices at radius `S_e = polygon_scale(6)·s_rated`.
pub fn polygon_thermal_constraints(
    name: &str,
    p: &LinExpr,
    q: &LinExpr,
    s_rated: f64,
) -> [Constraint; 6] {
    let s_e = polygon_scale(6) * s_rated;
    let r3 = 3f64.sqrt();
    // Q + √3 P >= -√3 S_e,  Q + √3 P <= √3 S_e
    let qp_plus = q.clone().plus(p, r3);
    // Q - √3 P <= √3 S_e,   Q - √3 P >= -√3 S_e
    let qp_minus = q.clone().plus(p, -r3);
    [
        Constraint::new(
            format!("{name}:h1"),
            qp_plus.clone(),
            Relation::Ge,
            -r3 * s_e,
        ),
        Constraint::new(format!("{name}:h2"), qp_plus, Relation::Le, r3 * s_e),
        Constraint::new(
            format!("{name}:h3"),
            q.clone(),
            Relation::Le,
            r3 / 2.0 * s_e,
        ),
        Constraint::new(
            format!("{name}:h4"),
            q.clone(),
            Relation::Ge,
            -r3 / 2.0 * s_e,
        ),
        Constraint::new(
            format!("{name}:h5"),
            qp_minus.clone(),
            Relation::Le,
            r3 * s_e,
        ),
        Constraint::new(format!("{name}:h6"), qp_minus, Relation::Ge, -r3 * s_e),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feasible(cs: &[Constraint], values: &[f64]) -> bool {
        cs.iter().all(|c| c.violation(values) <= 1e-12)
    }

    #[test]
    fn product_envelope_pins_z() {
        let (x, y, z) = (VarId(0), VarId(1), VarId(2));
        let cs = linearize_product_bin_cont("p", x, &LinExpr::var(y), (-5.0, 5.0), z).unwrap();
        for xv in [0.0, 1.0] {
            for yv in (-5..=5).map(f64::from) {
                for zv in (-50..=50).map(|k| f64::from(k) * 0.2) {
                    let ok = feasible(&cs, &[xv, yv, zv]);
                    assert_eq!(ok, (zv - xv * yv).abs() < 1e-9, "x={xv} y={yv} z={zv}");
                }
            }
        }
    }

    #[test]
    fn product_rejects_unbounded() {
        let r = linearize_product_bin_cont(
            "p",
            VarId(0),
            &LinExpr::var(VarId(1)),
            (f64::NEG_INFINITY, 1.0),
            VarId(2),
        );
        assert!(matches!(r, Err(MilpError::UnboundedFactor(_))));
    }

    #[test]
    fn hexagon_scale() {
        assert!((polygon_scale(6) - 1.09964).abs() < 1e-5);
    }

    #[test]
    fn hexagon_geometry() {
        let (p, q) = (LinExpr::var(VarId(0)), LinExpr::var(VarId(1)));
        let cs = polygon_thermal_constraints("t", &p, &q, 1.0);
        assert!(feasible(&cs, &[0.0, 0.0]));
        let s_e = polygon_scale(6);
        // Vertices sit on the circle of radius S_e.
        for k in 0..6 {
            let a = f64::from(k) * PI / 3.0;
            assert!(feasible(
                &cs,
                &[s_e * a.cos() * (1.0 - 1e-12), s_e * a.sin() * (1.0 - 1e-12)]
            ));
        }
        // Inscribed radius is √3/2 · S_e.
        let apothem = 3f64.sqrt() / 2.0 * s_e;
        for k in 0..360 {
            let a = f64::from(k).to_radians();
            assert!(feasible(&cs, &[apothem * a.cos(), apothem * a.sin()]));
        }
        let outside = 1.2;
        assert!((0..360).any(|k| {
            let a = f64::from(k).to_radians();
            !feasible(&cs, &[outside * a.cos(), outside * a.sin()])
        }));
    }
}
