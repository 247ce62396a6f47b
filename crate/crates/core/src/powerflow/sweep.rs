use std::f64::consts::PI;

use num_complex::Complex64;

use crate::netmodel::NetworkModel;

use super::{build_tree, edge_ratio, FlowState, OperatingPoint, PowerFlowError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    /// Convergence threshold on the largest voltage change (pu).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Nonlinear backward/forward sweep with constant-power loads, constant
/// susceptance capacitors and ideal-ratio regulators.
pub fn sweep_pf(
    model: &NetworkModel,
    point: &OperatingPoint,
    options: SweepOptions,
) -> Result<FlowState, PowerFlowError> {
    if !(options.tol > 0.0) {
        return Err(PowerFlowError::Shape("sweep tolerance must be > 0".into()));
    }
    point.check_shape(model)?;
    let tree = build_tree(model, point)?;
    let n = model.buses().len();
    let m = model.edges().len();
    let sb = model.s_base_phase();
    let shift = [
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, -2.0 * PI / 3.0),
        Complex64::from_polar(1.0, 2.0 * PI / 3.0),
    ];

    let mut supplied = vec![[false; 3]; n];
    for &b in &tree.order {
        match tree.parent[b] {
            None => {
                for p in model.bus(b).phases.indices() {
                    supplied[b][p] = true;
                }
            }
            Some((k, parent)) => {
                for p in model.edge(k).phases.indices() {
                    supplied[b][p] = supplied[parent][p] && model.bus(b).phases.contains_index(p);
                }
            }
        }
    }

    let zero = Complex64::new(0.0, 0.0);
    let mut volts = vec![[zero; 3]; n];
    for &(b, u_set) in &tree.roots {
        for p in 0..3 {
            if supplied[b][p] {
                volts[b][p] = shift[p] * u_set.sqrt();
            }
        }
    }
    let z: Vec<[[Complex64; 3]; 3]> = (0..m)
        .map(|k| {
            let (r, x) = model.impedance_pu(k);
            let mut out = [[zero; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = Complex64::new(r[i][j], x[i][j]);
                }
            }
            out
        })
        .collect();
    let ratios: Vec<[f64; 3]> = (0..m).map(|k| edge_ratio(model, point, k)).collect();

    // Flat start: propagate slack voltages through ratios only.
    for &b in &tree.order {
        if let Some((k, parent)) = tree.parent[b] {
            for p in model.edge(k).phases.indices() {
                if supplied[b][p] {
                    volts[b][p] = volts[parent][p] * ratios[k][p];
                }
            }
        }
    }

    let mut current = vec![[zero; 3]; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        // Backward: bus injection currents, accumulated toward the slacks.
        for &b in &tree.order {
            for p in 0..3 {
                current[b][p] = zero;
                if !supplied[b][p] {
                    continue;
                }
                let vb = volts[b][p];
                let s = Complex64::new(point.p_kw[b][p], point.q_kvar[b][p]) / sb;
                if vb.norm() > 0.0 {
                    current[b][p] = (s / vb).conj();
                }
                if let Some(c) = model.capacitor_of_bus(b) {
                    if point.caps[c][p] {
                        let q = model.capacitors()[c].q_rated[p] / sb;
                        current[b][p] -= Complex64::new(0.0, q) * vb;
                    }
                }
            }
        }
        for &b in tree.order.iter().rev() {
            if let Some((k, parent)) = tree.parent[b] {
                for p in model.edge(k).phases.indices() {
                    let i = current[b][p] * ratios[k][p];
                    current[parent][p] += i;
                }
            }
        }
        // Forward: voltages from the slacks outward.
        let mut change: f64 = 0.0;
        for &b in &tree.order {
            let Some((k, parent)) = tree.parent[b] else {
                continue;
            };
            let edge = model.edge(k);
            for p in edge.phases.indices() {
                if !supplied[b][p] {
                    continue;
                }
                let next = if model.regulator_index(k).is_some() {
                    volts[parent][p] * ratios[k][p]
                } else {
                    let drop: Complex64 = edge
                        .phases
                        .indices()
                        .map(|q| z[k][p][q] * current[b][q])
                        .sum();
                    volts[parent][p] - drop
                };
                change = change.max((next - volts[b][p]).norm());
                volts[b][p] = next;
            }
        }
        if change < options.tol {
            break;
        }
        if iterations >= options.max_iter || !change.is_finite() {
            return Err(PowerFlowError::NotConverged {
                iterations,
                mismatch: change,
            });
        }
    }

    // Branch currents at the receiving end equal the subtree current; at
    // the sending end of a regulator they are scaled by the ratio.
    let mut p_kw = vec![[0.0; 3]; m];
    let mut q_kvar = vec![[0.0; 3]; m];
    for &b in &tree.order {
        if let Some((k, parent)) = tree.parent[b] {
            let sign = if model.edge_endpoints(k).0 == parent {
                1.0
            } else {
                -1.0
            };
            for p in model.edge(k).phases.indices() {
                let i_send = current[b][p] * ratios[k][p];
                let s = volts[parent][p] * i_send.conj() * sb;
                p_kw[k][p] = sign * s.re;
                q_kvar[k][p] = sign * s.im;
            }
        }
    }
    for (d, _) in model.dgs().iter().enumerate() {
        if let Some(k) = model.virtual_edge_of_dg(d) {
            if point.closed[k] {
                let (_, bus) = model.edge_endpoints(k);
                for p in model.edge(k).phases.indices() {
                    let s = volts[bus][p] * current[bus][p].conj() * sb;
                    p_kw[k][p] = s.re;
                    q_kvar[k][p] = s.im;
                }
            }
        }
    }
    let v: Vec<[f64; 3]> = volts.iter().map(|row| row.map(|c| c.norm())).collect();
    let u = v.iter().map(|row| row.map(|x| x * x)).collect();
    Ok(FlowState {
        p_kw,
        q_kvar,
        u,
        v,
        energized: tree.visited,
        supplied,
        iterations,
    })
}
