//! One time instance of the linearized three-phase network model as MILP
//! variables and constraints. Stage 1 builds a single snapshot; Stage 2
//! builds one per time step and links them.

use crate::milp::{
    linearize_product_bin_cont, polygon_thermal_constraints, LinExpr, MilpError, MilpModel,
    Relation, VarId,
};
use crate::netmodel::{tap_ratio, EdgeKind, NetworkModel, Phase, TAP_POSITIONS};
use crate::powerflow::composite_impedance;
use crate::topology::Cycle;

/// State of an edge inside one snapshot. For non-switch edges `Closed`
/// means in service and `Open` means out of service.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum EdgeSpec {
    Open,
    Closed,
    Var(VarId),
}

impl EdgeSpec {
    pub fn expr(self) -> LinExpr {
        match self {
            EdgeSpec::Open => LinExpr::new(),
            EdgeSpec::Closed => LinExpr::constant(1.0),
            EdgeSpec::Var(v) => LinExpr::var(v),
        }
    }

    pub fn value(self, values: &[f64]) -> bool {
        match self {
            EdgeSpec::Open => false,
            EdgeSpec::Closed => true,
            EdgeSpec::Var(v) => values[v.0] > 0.5,
        }
    }
}

pub(crate) struct SnapshotConfig<'a> {
    /// Suffix appended to every variable name.
    pub tag: String,
    pub edges: Vec<EdgeSpec>,
    /// Fixed tap positions per regulator; `None` makes taps decisions.
    pub taps: Option<&'a [[usize; 3]]>,
    /// Fixed capacitor status per bank; `None` makes them decisions.
    pub caps: Option<&'a [[bool; 3]]>,
    pub u_min: f64,
    pub u_max: f64,
    pub head_cap: f64,
    /// Largest demand factor any bus can take, for flow bounds.
    pub demand_scale_max: f64,
    pub cycles: &'a [Cycle],
}

pub(crate) struct Snapshot {
    pub tag: String,
    pub edges: Vec<EdgeSpec>,
    pub v: Vec<VarId>,
    pub u: Vec<[Option<VarId>; 3]>,
    /// Flows in per unit of the per-phase base, edge orientation.
    pub p: Vec<[Option<VarId>; 3]>,
    pub q: Vec<[Option<VarId>; 3]>,
    /// Tap selection binaries per regulator, per control group.
    pub tap_u: Vec<Vec<Vec<VarId>>>,
    pub cap_u: Vec<[Option<VarId>; 3]>,
    m_p: [f64; 3],
    m_q: [f64; 3],
}

fn ph(p: usize) -> char {
    Phase::ALL[p].letter()
}

/// Control group of a phase for gang-operated devices.
fn group(gang: bool, p: usize) -> usize {
    if gang {
        0
    } else {
        p
    }
}

impl Snapshot {
    /// Declares the snapshot's variables.
    pub fn declare(
        milp: &mut MilpModel,
        net: &NetworkModel,
        cfg: &SnapshotConfig<'_>,
    ) -> Result<Self, MilpError> {
        let tag = &cfg.tag;
        let sb = net.s_base_phase();
        let mut m_p = [0.0; 3];
        let mut m_q = [0.0; 3];
        for b in net.buses() {
            for p in 0..3 {
                m_p[p] += b.load_p[p] / sb * cfg.demand_scale_max;
                m_q[p] += b.load_q[p].abs() / sb * cfg.demand_scale_max;
            }
        }
        for c in net.capacitors() {
            for p in 0..3 {
                m_q[p] += c.q_rated[p] / sb * cfg.u_max;
            }
        }
        for p in 0..3 {
            m_p[p] += 1e-6;
            m_q[p] += 1e-6;
        }

        let mut v = Vec::with_capacity(net.buses().len());
        let mut u = Vec::with_capacity(net.buses().len());
        for (i, bus) in net.buses().iter().enumerate() {
            let vi = milp.binary(format!("v[{}]{tag}", bus.id))?;
            let mut row = [None; 3];
            for p in bus.phases.indices() {
                let (lo, hi) = if bus.is_source {
                    let s = bus.source_voltage_pu * bus.source_voltage_pu;
                    (s, s)
                } else {
                    (0.0, cfg.u_max)
                };
                row[p] = Some(milp.continuous(format!("U[{},{}]{tag}", bus.id, ph(p)), lo, hi)?);
            }
            if bus.is_source {
                milp.fix(vi, 1.0);
            }
            v.push(vi);
            u.push(row);
            debug_assert_eq!(v.len(), i + 1);
        }

        let mut pv = Vec::with_capacity(net.edges().len());
        let mut qv = Vec::with_capacity(net.edges().len());
        for (k, edge) in net.edges().iter().enumerate() {
            let mut prow = [None; 3];
            let mut qrow = [None; 3];
            let out = cfg.edges[k] == EdgeSpec::Open;
            for p in edge.phases.indices() {
                let (plo, phi, qlo, qhi) = if out {
                    (0.0, 0.0, 0.0, 0.0)
                } else if edge.kind == EdgeKind::VirtualDgEdge {
                    (0.0, m_p[p], -m_q[p], m_q[p])
                } else {
                    (-m_p[p], m_p[p], -m_q[p], m_q[p])
                };
                prow[p] =
                    Some(milp.continuous(format!("P[{},{}]{tag}", edge.id, ph(p)), plo, phi)?);
                qrow[p] =
                    Some(milp.continuous(format!("Q[{},{}]{tag}", edge.id, ph(p)), qlo, qhi)?);
            }
            pv.push(prow);
            qv.push(qrow);
        }

        let mut tap_u = Vec::new();
        if cfg.taps.is_none() {
            for (r, reg) in net.regulators().iter().enumerate() {
                let edge = net.edge(net.regulator_edge(r));
                let groups: Vec<usize> = if reg.gang {
                    vec![0]
                } else {
                    edge.phases.indices().collect()
                };
                let mut per_group = vec![Vec::new(); 3];
                for g in groups {
                    let mut sel = Vec::with_capacity(TAP_POSITIONS);
                    for pos in 1..=TAP_POSITIONS {
                        let name = if reg.gang {
                            format!("utap[{},{pos}]{tag}", reg.edge)
                        } else {
                            format!("utap[{},{},{pos}]{tag}", reg.edge, ph(g))
                        };
                        sel.push(milp.binary(name)?);
                    }
                    per_group[g] = sel;
                }
                tap_u.push(per_group);
            }
        }

        let mut cap_u = Vec::new();
        if cfg.caps.is_none() {
            for (c, bank) in net.capacitors().iter().enumerate() {
                let bus = net.bus(net.capacitor_bus(c));
                let mut row = [None; 3];
                if bank.gang {
                    let x = milp.binary(format!("ucap[{}]{tag}", bank.bus))?;
                    for p in bus.phases.indices() {
                        row[p] = Some(x);
                    }
                } else {
                    for p in bus.phases.indices() {
                        row[p] = Some(milp.binary(format!("ucap[{},{}]{tag}", bank.bus, ph(p)))?);
                    }
                }
                cap_u.push(row);
            }
        }

        Ok(Snapshot {
            tag: tag.clone(),
            edges: cfg.edges.clone(),
            v,
            u,
            p: pv,
            q: qv,
            tap_u,
            cap_u,
            m_p,
            m_q,
        })
    }

    /// Adds every network constraint. `demand[i]` is the demand factor of
    /// bus `i` (multiplies its nominal load); `None` means no demand.
    pub fn constrain(
        &self,
        milp: &mut MilpModel,
        net: &NetworkModel,
        cfg: &SnapshotConfig<'_>,
        demand: &[Option<LinExpr>],
    ) -> Result<(), MilpError> {
        let tag = &self.tag;
        let sb = net.s_base_phase();
        let n = net.buses().len();

        // Capacitor reactive injection per bus and phase, in pu.
        let mut cap_q: Vec<[LinExpr; 3]> = vec![Default::default(); n];
        for (c, bank) in net.capacitors().iter().enumerate() {
            let b = net.capacitor_bus(c);
            for p in net.bus(b).phases.indices() {
                let u_bp = self.u[b][p].expect("bus phase voltage");
                let k = bank.q_rated[p] / sb;
                match cfg.caps {
                    Some(fixed) => {
                        if fixed[c][p] {
                            cap_q[b][p].add(u_bp, k);
                        }
                    }
                    None => {
                        let x = self.cap_u[c][p].expect("capacitor binary");
                        let z = milp.continuous(
                            format!("zcap[{},{}]{tag}", bank.bus, ph(p)),
                            0.0,
                            cfg.u_max,
                        )?;
                        for c in linearize_product_bin_cont(
                            &format!("cap[{},{}]{tag}", bank.bus, ph(p)),
                            x,
                            &LinExpr::var(u_bp),
                            (0.0, cfg.u_max),
                            z,
                        )? {
                            milp.push_constraint(c);
                        }
                        cap_q[b][p].add(z, k);
                    }
                }
            }
        }

        // Conservation at every non-source bus phase.
        for (i, bus) in net.buses().iter().enumerate() {
            if bus.is_source {
                continue;
            }
            for p in bus.phases.indices() {
                let mut bal_p = LinExpr::new();
                let mut bal_q = LinExpr::new();
                for &k in net.incident_edges(i) {
                    let (Some(pk), Some(qk)) = (self.p[k][p], self.q[k][p]) else {
                        continue;
                    };
                    let sign = if net.edge_endpoints(k).1 == i {
                        1.0
                    } else {
                        -1.0
                    };
                    bal_p.add(pk, sign);
                    bal_q.add(qk, sign);
                }
                if let Some(d) = &demand[i] {
                    bal_p.add_expr(d, -bus.load_p[p] / sb);
                    bal_q.add_expr(d, -bus.load_q[p] / sb);
                }
                bal_q.add_expr(&cap_q[i][p], 1.0);
                milp.constrain(
                    format!("balP[{},{}]{tag}", bus.id, ph(p)),
                    bal_p,
                    Relation::Eq,
                    0.0,
                );
                milp.constrain(
                    format!("balQ[{},{}]{tag}", bus.id, ph(p)),
                    bal_q,
                    Relation::Eq,
                    0.0,
                );
            }
        }

        // Voltage box.
        for (i, bus) in net.buses().iter().enumerate() {
            if bus.is_source {
                continue;
            }
            for p in bus.phases.indices() {
                let u_ip = self.u[i][p].expect("bus phase voltage");
                let lo = LinExpr::var(u_ip).with(self.v[i], -cfg.u_min);
                let hi = LinExpr::var(u_ip).with(self.v[i], -cfg.u_max);
                milp.constrain(
                    format!("vlo[{},{}]{tag}", bus.id, ph(p)),
                    lo,
                    Relation::Ge,
                    0.0,
                );
                milp.constrain(
                    format!("vhi[{},{}]{tag}", bus.id, ph(p)),
                    hi,
                    Relation::Le,
                    0.0,
                );
            }
        }

        for (k, edge) in net.edges().iter().enumerate() {
            let spec = self.edges[k];
            if spec == EdgeSpec::Open {
                continue;
            }
            let (i, j) = net.edge_endpoints(k);
            let id = &edge.id;

            // Energization coupling and flow gating. A closed switch ties
            // the energization of its ends; it may close inside a dead area.
            let gates = match spec {
                EdgeSpec::Var(d) => {
                    for (a, b) in [(i, j), (j, i)] {
                        milp.constrain(
                            format!("dv[{id},{}]{tag}", net.bus(a).id),
                            LinExpr::var(self.v[a]).with(self.v[b], -1.0).with(d, 1.0),
                            Relation::Le,
                            1.0,
                        );
                    }
                    vec![LinExpr::var(d), LinExpr::var(self.v[i])]
                }
                _ => {
                    milp.constrain(
                        format!("vv[{id}]{tag}"),
                        LinExpr::var(self.v[i]).with(self.v[j], -1.0),
                        Relation::Eq,
                        0.0,
                    );
                    vec![LinExpr::var(self.v[i])]
                }
            };
            for p in edge.phases.indices() {
                let pk = self.p[k][p].expect("edge flow");
                let qk = self.q[k][p].expect("edge flow");
                for (var, m, name) in [(pk, self.m_p[p], "P"), (qk, self.m_q[p], "Q")] {
                    for (g, gate) in gates.iter().enumerate() {
                        let ub = LinExpr::var(var).plus(gate, -m);
                        let lb = LinExpr::var(var).plus(gate, m);
                        milp.constrain(
                            format!("m{name}hi{g}[{id},{}]{tag}", ph(p)),
                            ub,
                            Relation::Le,
                            0.0,
                        );
                        milp.constrain(
                            format!("m{name}lo{g}[{id},{}]{tag}", ph(p)),
                            lb,
                            Relation::Ge,
                            0.0,
                        );
                    }
                }
            }

            if edge.kind == EdgeKind::VirtualDgEdge {
                self.dg_limits(milp, net, cfg, k, j)?;
                continue;
            }

            // Thermal polygon.
            if edge.s_rated > 0.0 {
                let mut rating = net.phase_rating_kva(k) / sb;
                if net.is_source_adjacent(k) {
                    rating *= cfg.head_cap;
                }
                for p in edge.phases.indices() {
                    let pk = LinExpr::var(self.p[k][p].expect("edge flow"));
                    let qk = LinExpr::var(self.q[k][p].expect("edge flow"));
                    for c in polygon_thermal_constraints(
                        &format!("s[{id},{}]{tag}", ph(p)),
                        &pk,
                        &qk,
                        rating,
                    ) {
                        milp.push_constraint(c);
                    }
                }
            }

            // Voltage relation across the edge.
            if let Some(r) = net.regulator_index(k) {
                self.regulator(milp, net, cfg, r, k, i, j)?;
                continue;
            }
            let (rr, xx) = net.impedance_pu(k);
            let (rt, xt) = composite_impedance(&rr, &xx);
            for p in edge.phases.indices() {
                let mut drop = LinExpr::new();
                for q in edge.phases.indices() {
                    drop.add(self.p[k][q].expect("edge flow"), 2.0 * rt[p][q]);
                    drop.add(self.q[k][q].expect("edge flow"), 2.0 * xt[p][q]);
                }
                let ui = self.u[i][p].expect("bus phase voltage");
                let uj = self.u[j][p].expect("bus phase voltage");
                let diff = LinExpr::var(ui).with(uj, -1.0);
                match spec {
                    EdgeSpec::Var(d) => {
                        let z = milp.continuous(
                            format!("zsw[{id},{}]{tag}", ph(p)),
                            -cfg.u_max,
                            cfg.u_max,
                        )?;
                        for c in linearize_product_bin_cont(
                            &format!("sw[{id},{}]{tag}", ph(p)),
                            d,
                            &diff,
                            (-cfg.u_max, cfg.u_max),
                            z,
                        )? {
                            milp.push_constraint(c);
                        }
                        milp.constrain(
                            format!("drop[{id},{}]{tag}", ph(p)),
                            LinExpr::var(z).plus(&drop, -1.0),
                            Relation::Eq,
                            0.0,
                        );
                    }
                    _ => milp.constrain(
                        format!("drop[{id},{}]{tag}", ph(p)),
                        diff.plus(&drop, -1.0),
                        Relation::Eq,
                        0.0,
                    ),
                }
            }
        }

        self.radiality(milp, cfg);
        Ok(())
    }

    fn dg_limits(
        &self,
        milp: &mut MilpModel,
        net: &NetworkModel,
        cfg: &SnapshotConfig<'_>,
        k: usize,
        bus: usize,
    ) -> Result<(), MilpError> {
        let tag = &self.tag;
        let sb = net.s_base_phase();
        let edge = net.edge(k);
        let dg = net.dg_of_virtual_edge(k).expect("virtual edge serves a DG");
        let gate = self.edges[k].expr();
        let mut sum_p = LinExpr::new();
        let mut sum_q = LinExpr::new();
        for p in edge.phases.indices() {
            sum_p.add(self.p[k][p].expect("edge flow"), 1.0);
            sum_q.add(self.q[k][p].expect("edge flow"), 1.0);
        }
        let pmax = dg.p_max / sb;
        let qmax = dg.q_max / sb;
        milp.constrain(
            format!("dgP[{}]{tag}", dg.id),
            sum_p.plus(&gate, -pmax),
            Relation::Le,
            0.0,
        );
        milp.constrain(
            format!("dgQhi[{}]{tag}", dg.id),
            sum_q.clone().plus(&gate, -qmax),
            Relation::Le,
            0.0,
        );
        milp.constrain(
            format!("dgQlo[{}]{tag}", dg.id),
            sum_q.plus(&gate, qmax),
            Relation::Ge,
            0.0,
        );
        // A forming DG holds one voltage magnitude on all of its phases.
        let phases: Vec<usize> = net.bus(bus).phases.indices().collect();
        for w in phases.windows(2) {
            let a = self.u[bus][w[0]].expect("bus phase voltage");
            let b = self.u[bus][w[1]].expect("bus phase voltage");
            let diff = LinExpr::var(a).with(b, -1.0);
            let slack = LinExpr::constant(cfg.u_max).plus(&gate, -cfg.u_max);
            milp.constrain(
                format!("dgU+[{},{}]{tag}", dg.id, ph(w[1])),
                diff.clone().plus(&slack, -1.0),
                Relation::Le,
                0.0,
            );
            milp.constrain(
                format!("dgU-[{},{}]{tag}", dg.id, ph(w[1])),
                diff.plus(&slack, 1.0),
                Relation::Ge,
                0.0,
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn regulator(
        &self,
        milp: &mut MilpModel,
        net: &NetworkModel,
        cfg: &SnapshotConfig<'_>,
        r: usize,
        k: usize,
        i: usize,
        j: usize,
    ) -> Result<(), MilpError> {
        let tag = &self.tag;
        let reg = &net.regulators()[r];
        let edge = net.edge(k);
        for p in edge.phases.indices() {
            let ui = self.u[i][p].expect("bus phase voltage");
            let uj = self.u[j][p].expect("bus phase voltage");
            match cfg.taps {
                Some(fixed) => {
                    let a = tap_ratio(fixed[r][p]);
                    milp.constrain(
                        format!("reg[{},{}]{tag}", edge.id, ph(p)),
                        LinExpr::var(uj).with(ui, -a * a),
                        Relation::Eq,
                        0.0,
                    );
                }
                None => {
                    let sel = &self.tap_u[r][group(reg.gang, p)];
                    let mut rhs = LinExpr::var(uj);
                    for (pos, &x) in sel.iter().enumerate() {
                        let z = milp.continuous(
                            format!("ztap[{},{},{}]{tag}", edge.id, ph(p), pos + 1),
                            0.0,
                            cfg.u_max,
                        )?;
                        for c in linearize_product_bin_cont(
                            &format!("tap[{},{},{}]{tag}", edge.id, ph(p), pos + 1),
                            x,
                            &LinExpr::var(ui),
                            (0.0, cfg.u_max),
                            z,
                        )? {
                            milp.push_constraint(c);
                        }
                        let b = tap_ratio(pos + 1);
                        rhs.add(z, -b * b);
                    }
                    milp.constrain(
                        format!("reg[{},{}]{tag}", edge.id, ph(p)),
                        rhs,
                        Relation::Eq,
                        0.0,
                    );
                }
            }
        }
        if cfg.taps.is_none() {
            for (g, sel) in self.tap_u[r].iter().enumerate() {
                if sel.is_empty() {
                    continue;
                }
                let mut one = LinExpr::new();
                for &x in sel {
                    one.add(x, 1.0);
                }
                milp.constrain(
                    format!("tap1[{},{}]{tag}", edge.id, ph(g)),
                    one,
                    Relation::Eq,
                    1.0,
                );
            }
        }
        Ok(())
    }

    fn radiality(&self, milp: &mut MilpModel, cfg: &SnapshotConfig<'_>) {
        for (c, cycle) in cfg.cycles.iter().enumerate() {
            let mut expr = LinExpr::new();
            let mut rhs = cycle.edges.len() as f64 - 1.0;
            let mut broken = false;
            for &k in &cycle.edges {
                match self.edges[k] {
                    EdgeSpec::Open => broken = true,
                    EdgeSpec::Closed => rhs -= 1.0,
                    EdgeSpec::Var(d) => {
                        expr.add(d, 1.0);
                    }
                }
            }
            if broken {
                continue;
            }
            milp.constrain(format!("cyc[{c}]{}", self.tag), expr, Relation::Le, rhs);
        }
    }

    /// Closed flag per edge under a solution.
    pub fn closed(&self, values: &[f64]) -> Vec<bool> {
        self.edges.iter().map(|e| e.value(values)).collect()
    }

    pub fn tap_positions(
        &self,
        net: &NetworkModel,
        values: &[f64],
        fixed: Option<&[[usize; 3]]>,
    ) -> Vec<[usize; 3]> {
        if let Some(f) = fixed {
            return f.to_vec();
        }
        net.regulators()
            .iter()
            .enumerate()
            .map(|(r, reg)| {
                let mut out = reg.taps;
                for p in 0..3 {
                    let sel = &self.tap_u[r][group(reg.gang, p)];
                    if let Some(pos) = sel.iter().position(|x| values[x.0] > 0.5) {
                        out[p] = pos + 1;
                    }
                }
                out
            })
            .collect()
    }

    pub fn cap_status(
        &self,
        net: &NetworkModel,
        values: &[f64],
        fixed: Option<&[[bool; 3]]>,
    ) -> Vec<[bool; 3]> {
        if let Some(f) = fixed {
            return f.to_vec();
        }
        (0..net.capacitors().len())
            .map(|c| self.cap_u[c].map(|x| x.is_some_and(|x| values[x.0] > 0.5)))
            .collect()
    }

    /// Flows in kW / kVAr per edge and phase.
    pub fn flows_kw(&self, net: &NetworkModel, values: &[f64]) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let sb = net.s_base_phase();
        let read = |rows: &Vec<[Option<VarId>; 3]>| {
            rows.iter()
                .map(|row| row.map(|x| x.map_or(0.0, |x| values[x.0] * sb)))
                .collect()
        };
        (read(&self.p), read(&self.q))
    }

    pub fn voltages(&self, values: &[f64]) -> Vec<[f64; 3]> {
        self.u
            .iter()
            .map(|row| row.map(|x| x.map_or(0.0, |x| values[x.0])))
            .collect()
    }
}
