//! Exhaustive Stage-1 reference solver for small instances. Every
//! combination of switch, load-switch, capacitor and tap decisions is
//! checked for radiality and then for feasibility of the linear power flow
//! under the same limits the MILP uses.

use crate::netmodel::{EdgeKind, FaultScenario, NetworkModel, TAP_POSITIONS};
use crate::powerflow::{linear_pf, FlowState, OperatingPoint};
use crate::stage1::{decision_edges, settled_factor, Stage1Options};
use crate::topology::UnionFind;

use super::{polygon_scale, MilpError};

/// Most binaries the oracle will enumerate.
pub const ORACLE_MAX_BINARIES: usize = 20;
const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleState {
    pub closed: Vec<bool>,
    pub served: Vec<bool>,
    pub taps: Vec<[usize; 3]>,
    pub caps: Vec<[bool; 3]>,
    pub dg_slack_u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    /// Full Stage-1 objective of the best state.
    pub objective: f64,
    pub weighted_restored_kw: f64,
    pub best_state: OracleState,
    pub states_checked: usize,
}

/// One enumerated decision.
#[derive(Clone, Copy, Debug)]
enum Bit {
    Edge(usize),
    Load(usize),
    Cap(usize, usize),
    /// Regulator, control group, bit index of the 0-based tap position.
    Tap(usize, usize, usize),
}

pub fn brute_force_oracle(
    model: &NetworkModel,
    scenario: &FaultScenario,
    options: &Stage1Options,
) -> Result<Option<OracleResult>, MilpError> {
    let fixed = decision_edges(model, scenario, options.allow_dg_islanding);
    let mut bits = Vec::new();
    for (k, f) in fixed.iter().enumerate() {
        if f.is_none() {
            bits.push(Bit::Edge(k));
        }
    }
    for (i, bus) in model.buses().iter().enumerate() {
        if !bus.is_source && bus.has_load() && bus.load_switchable {
            bits.push(Bit::Load(i));
        }
    }
    for (c, bank) in model.capacitors().iter().enumerate() {
        let bus = model.bus(model.capacitor_bus(c));
        if bank.gang {
            bits.push(Bit::Cap(c, 0));
        } else {
            for p in bus.phases.indices() {
                bits.push(Bit::Cap(c, p));
            }
        }
    }
    let tap_bits = TAP_POSITIONS.trailing_zeros() as usize;
    for (r, reg) in model.regulators().iter().enumerate() {
        let edge = model.edge(model.regulator_edge(r));
        let groups: Vec<usize> = if reg.gang {
            vec![0]
        } else {
            edge.phases.indices().collect()
        };
        for g in groups {
            for b in 0..tap_bits {
                bits.push(Bit::Tap(r, g, b));
            }
        }
    }
    if bits.len() > ORACLE_MAX_BINARIES {
        return Err(MilpError::OracleLimit {
            binaries: bits.len(),
            cap: ORACLE_MAX_BINARIES,
        });
    }

    let weights = options.weights_for(model);
    let mut best: Option<OracleResult> = None;
    let mut checked = 0;
    for mask in 0u64..(1u64 << bits.len()) {
        let on = |idx: usize| mask >> idx & 1 == 1;
        let mut closed: Vec<bool> = fixed.iter().map(|f| f.unwrap_or(false)).collect();
        let mut load_on = vec![false; model.buses().len()];
        let mut caps: Vec<[bool; 3]> = vec![[false; 3]; model.capacitors().len()];
        let mut taps: Vec<[usize; 3]> = model.regulators().iter().map(|r| r.taps).collect();
        let mut tap_pos = vec![[0usize; 3]; model.regulators().len()];
        for (idx, bit) in bits.iter().enumerate() {
            match *bit {
                Bit::Edge(k) => closed[k] = on(idx),
                Bit::Load(i) => load_on[i] = on(idx),
                Bit::Cap(c, g) => {
                    if model.capacitors()[c].gang {
                        caps[c] = [on(idx); 3];
                    } else {
                        caps[c][g] = on(idx);
                    }
                }
                Bit::Tap(r, g, b) => {
                    if on(idx) {
                        tap_pos[r][g] |= 1 << b;
                    }
                }
            }
        }
        for (r, reg) in model.regulators().iter().enumerate() {
            for p in 0..3 {
                let g = if reg.gang { 0 } else { p };
                taps[r][p] = tap_pos[r][g] + 1;
            }
        }
        let Some(state) = evaluate(model, options, &closed, &load_on, &taps, &caps) else {
            continue;
        };
        checked += 1;
        let mut objective = 0.0;
        let mut weighted = 0.0;
        for (i, bus) in model.buses().iter().enumerate() {
            if state.served[i] {
                weighted += bus.weight * bus.total_load_kw();
            }
        }
        objective += weights.alpha * weighted;
        for (k, f) in fixed.iter().enumerate() {
            if f.is_some() {
                continue;
            }
            match model.edge(k).kind {
                EdgeKind::SectionalizingSwitch if !closed[k] => objective -= weights.beta,
                EdgeKind::TieSwitch if closed[k] => objective -= weights.beta,
                EdgeKind::VirtualDgEdge if closed[k] => objective -= weights.gamma,
                _ => {}
            }
        }
        if best
            .as_ref()
            .is_none_or(|b| objective > b.objective + 1e-12)
        {
            best = Some(OracleResult {
                objective,
                weighted_restored_kw: weighted,
                best_state: state,
                states_checked: 0,
            });
        }
    }
    Ok(best.map(|mut b| {
        b.states_checked = checked;
        b
    }))
}

/// Feasibility of one discrete state. Returns the completed state (served
/// flags and a feasible island slack voltage) or `None`.
fn evaluate(
    model: &NetworkModel,
    options: &Stage1Options,
    closed: &[bool],
    load_on: &[bool],
    taps: &[[usize; 3]],
    caps: &[[bool; 3]],
) -> Option<OracleState> {
    let n = model.buses().len();
    // Radial over the graph with every source merged.
    let mut uf = UnionFind::new(model.vertex_count());
    for k in 0..model.edges().len() {
        if closed[k] {
            let (a, b) = model.edge_vertices(k);
            if !uf.union(a, b) {
                return None;
            }
        }
    }
    let root = uf.find(0);
    let energized: Vec<bool> = (0..n)
        .map(|i| uf.find(model.vertex_of_bus(i)) == root)
        .collect();

    let mut served = vec![false; n];
    for (i, bus) in model.buses().iter().enumerate() {
        if bus.is_source || !bus.has_load() {
            continue;
        }
        if energized[i] {
            served[i] = !bus.load_switchable || load_on[i];
        } else if bus.load_switchable && load_on[i] {
            // Serving requires energization; count each state once.
            return None;
        }
    }
    let mut point = OperatingPoint::unloaded(model, closed.to_vec());
    for i in 0..n {
        if served[i] {
            point.serve(model, i, settled_factor(model, i));
        }
    }
    point.taps = taps.to_vec();
    point.caps = caps.to_vec();

    let (t_lo, t_hi) = (options.u_min(), options.u_max());
    point.dg_slack_u = vec![t_lo; model.dgs().len()];
    let lo = linear_pf(model, &point).ok()?;
    point.dg_slack_u = vec![t_hi; model.dgs().len()];
    let hi = linear_pf(model, &point).ok()?;

    // Island membership: the DG whose slack drives each bus.
    let island = island_of_bus(model, closed);
    // Feasible slack interval per DG, as fractions of [t_lo, t_hi].
    let mut interval = vec![(0.0f64, 1.0f64); model.dgs().len()];
    let mut grid_ok = true;
    let mut require = |owner: Option<usize>, at_lo: f64, at_hi: f64, bound: f64, upper: bool| {
        // Constraint value g(λ) = at_lo + λ(at_hi - at_lo) against bound.
        let (a, b) = if upper {
            (at_lo - bound, at_hi - at_lo)
        } else {
            (bound - at_lo, at_lo - at_hi)
        };
        // Need a + λ b <= tol.
        match owner {
            None => {
                if a > FEAS_TOL {
                    grid_ok = false;
                }
            }
            Some(d) => {
                let iv = &mut interval[d];
                if b.abs() < 1e-15 {
                    if a > FEAS_TOL {
                        *iv = (1.0, 0.0);
                    }
                } else {
                    let lam = (FEAS_TOL - a) / b;
                    if b > 0.0 {
                        iv.1 = iv.1.min(lam);
                    } else {
                        iv.0 = iv.0.max(lam);
                    }
                }
            }
        }
    };

    for (i, bus) in model.buses().iter().enumerate() {
        if !lo.energized[i] {
            continue;
        }
        for p in bus.phases.indices() {
            if !lo.supplied[i][p] {
                if point.p_kw[i][p] != 0.0 || point.q_kvar[i][p] != 0.0 {
                    return None;
                }
                continue;
            }
            require(island[i], lo.u[i][p], hi.u[i][p], options.u_min(), false);
            require(island[i], lo.u[i][p], hi.u[i][p], options.u_max(), true);
        }
    }
    let r3 = 3f64.sqrt();
    for (k, edge) in model.edges().iter().enumerate() {
        if !closed[k] || edge.kind.is_virtual() || edge.s_rated <= 0.0 {
            continue;
        }
        let (f, _) = model.edge_endpoints(k);
        let owner = island[f];
        let mut rating = model.phase_rating_kva(k);
        if model.is_source_adjacent(k) {
            rating *= options.feeder_loading_cap;
        }
        let s_e = polygon_scale(6) * rating;
        for p in edge.phases.indices() {
            let val = |fl: &FlowState, a: f64, b: f64| a * fl.p_kw[k][p] + b * fl.q_kvar[k][p];
            for (a, b, bound) in [
                (r3, 1.0, r3 * s_e),
                (-r3, 1.0, r3 * s_e),
                (0.0, 1.0, r3 / 2.0 * s_e),
            ] {
                require(owner, val(&lo, a, b), val(&hi, a, b), bound, true);
                require(owner, val(&lo, a, b), val(&hi, a, b), -bound, false);
            }
        }
    }
    for (d, dg) in model.dgs().iter().enumerate() {
        let Some(k) = model.virtual_edge_of_dg(d) else {
            continue;
        };
        if !closed[k] {
            continue;
        }
        let sum = |fl: &FlowState, q: bool| -> f64 {
            (0..3)
                .map(|p| if q { fl.q_kvar[k][p] } else { fl.p_kw[k][p] })
                .sum()
        };
        require(Some(d), sum(&lo, false), sum(&hi, false), dg.p_max, true);
        require(Some(d), sum(&lo, true), sum(&hi, true), dg.q_max, true);
        require(Some(d), sum(&lo, true), sum(&hi, true), -dg.q_max, false);
        for p in model.edge(k).phases.indices() {
            require(Some(d), lo.p_kw[k][p], hi.p_kw[k][p], 0.0, false);
        }
    }
    if !grid_ok {
        return None;
    }
    let mut dg_slack_u = vec![1.0; model.dgs().len()];
    for (d, (a, b)) in interval.iter().enumerate() {
        let Some(k) = model.virtual_edge_of_dg(d) else {
            continue;
        };
        if !closed[k] {
            continue;
        }
        let (a, b) = (a.max(0.0), b.min(1.0));
        if a > b + 1e-12 {
            return None;
        }
        let lam = 0.5 * (a + b);
        dg_slack_u[d] = t_lo + lam * (t_hi - t_lo);
    }
    Some(OracleState {
        closed: closed.to_vec(),
        served,
        taps: taps.to_vec(),
        caps: caps.to_vec(),
        dg_slack_u,
    })
}

/// DG index whose island contains each bus, following closed physical
/// edges from every DG bus with a closed virtual edge.
fn island_of_bus(model: &NetworkModel, closed: &[bool]) -> Vec<Option<usize>> {
    let n = model.buses().len();
    let mut owner = vec![None; n];
    for (d, dg) in model.dgs().iter().enumerate() {
        let Some(k) = model.virtual_edge_of_dg(d) else {
            continue;
        };
        if !closed[k] {
            continue;
        }
        let start = model.bus_index(&dg.bus).expect("dg bus");
        let mut stack = vec![start];
        owner[start] = Some(d);
        while let Some(u) = stack.pop() {
            for &e in model.incident_edges(u) {
                if !closed[e] || model.edge(e).kind == EdgeKind::VirtualDgEdge {
                    continue;
                }
                let w = model.other_end(e, u);
                if owner[w].is_none() {
                    owner[w] = Some(d);
                    stack.push(w);
                }
            }
        }
    }
    owner
}
