use crate::netmodel::NetworkModel;

use super::{
    build_tree, composite_impedance, edge_ratio, FlowState, OperatingPoint, PowerFlowError,
};

const CAP_TOL: f64 = 1e-14;
const CAP_MAX_ITER: usize = 200;

/// Lossless linearized three-phase power flow: flows by downstream demand
/// aggregation, squared voltages by cumulative `2(r̃P + x̃Q)` drops from
/// each slack. Voltage-dependent capacitor injections are resolved by
/// fixed-point iteration.
pub fn linear_pf(
    model: &NetworkModel,
    point: &OperatingPoint,
) -> Result<FlowState, PowerFlowError> {
    point.check_shape(model)?;
    let tree = build_tree(model, point)?;
    let n = model.buses().len();
    let sb = model.s_base_phase();

    let mut supplied = vec![[false; 3]; n];
    let mut u = vec![[0.0; 3]; n];
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
    for &(b, u_set) in &tree.roots {
        for p in 0..3 {
            if supplied[b][p] {
                u[b][p] = u_set;
            }
        }
    }
    // Initial guess for capacitor injections.
    for &b in &tree.order {
        for p in 0..3 {
            if supplied[b][p] && u[b][p] == 0.0 {
                u[b][p] = 1.0;
            }
        }
    }

    let composite: Vec<_> = (0..model.edges().len())
        .map(|k| {
            let (r, x) = model.impedance_pu(k);
            composite_impedance(&r, &x)
        })
        .collect();

    let mut acc_p = vec![[0.0; 3]; n];
    let mut acc_q = vec![[0.0; 3]; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        for &b in &tree.order {
            for p in 0..3 {
                let (mut pd, mut qd) = (0.0, 0.0);
                if supplied[b][p] {
                    pd = point.p_kw[b][p] / sb;
                    qd = point.q_kvar[b][p] / sb;
                    if let Some(c) = model.capacitor_of_bus(b) {
                        if point.caps[c][p] {
                            qd -= model.capacitors()[c].q_rated[p] / sb * u[b][p];
                        }
                    }
                }
                acc_p[b][p] = pd;
                acc_q[b][p] = qd;
            }
        }
        for &b in tree.order.iter().rev() {
            if let Some((k, parent)) = tree.parent[b] {
                for p in model.edge(k).phases.indices() {
                    acc_p[parent][p] += acc_p[b][p];
                    acc_q[parent][p] += acc_q[b][p];
                }
            }
        }
        let mut change: f64 = 0.0;
        for &b in &tree.order {
            let Some((k, parent)) = tree.parent[b] else {
                continue;
            };
            let edge = model.edge(k);
            let ratio = edge_ratio(model, point, k);
            let (rt, xt) = &composite[k];
            for p in edge.phases.indices() {
                if !supplied[b][p] {
                    continue;
                }
                let next = if model.regulator_index(k).is_some() {
                    ratio[p] * ratio[p] * u[parent][p]
                } else {
                    let drop: f64 = edge
                        .phases
                        .indices()
                        .map(|q| rt[p][q] * acc_p[b][q] + xt[p][q] * acc_q[b][q])
                        .sum();
                    u[parent][p] - 2.0 * drop
                };
                change = change.max((next - u[b][p]).abs());
                u[b][p] = next;
            }
        }
        if change < CAP_TOL || iterations >= CAP_MAX_ITER || model.capacitors().is_empty() {
            break;
        }
    }

    let mut p_kw = vec![[0.0; 3]; model.edges().len()];
    let mut q_kvar = vec![[0.0; 3]; model.edges().len()];
    for &b in &tree.order {
        if let Some((k, parent)) = tree.parent[b] {
            let sign = if model.edge_endpoints(k).0 == parent {
                1.0
            } else {
                -1.0
            };
            for p in model.edge(k).phases.indices() {
                p_kw[k][p] = sign * acc_p[b][p] * sb;
                q_kvar[k][p] = sign * acc_q[b][p] * sb;
            }
        }
    }
    for (d, _) in model.dgs().iter().enumerate() {
        if let Some(k) = model.virtual_edge_of_dg(d) {
            if point.closed[k] {
                let (_, bus) = model.edge_endpoints(k);
                for p in model.edge(k).phases.indices() {
                    p_kw[k][p] = acc_p[bus][p] * sb;
                    q_kvar[k][p] = acc_q[bus][p] * sb;
                }
            }
        }
    }
    for i in 0..n {
        if !tree.visited[i] {
            u[i] = [0.0; 3];
        }
        for p in 0..3 {
            if !supplied[i][p] {
                u[i][p] = 0.0;
            }
        }
    }
    let v = u
        .iter()
        .map(|row| row.map(|x: f64| x.max(0.0).sqrt()))
        .collect();
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
