use serde::{Deserialize, Serialize};

use super::phase::PhaseSet;

pub type Matrix3 = [[f64; 3]; 3];

fn default_weight() -> f64 {
    1.0
}

fn default_source_voltage() -> f64 {
    1.0
}

fn is_default_weight(w: &f64) -> bool {
    *w == 1.0
}

/// A network bus with its spot load (kW / kVAr per phase).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Line-to-line base voltage in kV.
    pub base_kv: f64,
    #[serde(default)]
    pub load_p: [f64; 3],
    #[serde(default)]
    pub load_q: [f64; 3],
    #[serde(default = "default_weight", skip_serializing_if = "is_default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub load_switchable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clpu: Option<String>,
    #[serde(default)]
    pub is_source: bool,
    /// Voltage magnitude set-point (pu) held by a source bus.
    #[serde(default = "default_source_voltage")]
    pub source_voltage_pu: f64,
}

impl Bus {
    pub fn total_load_kw(&self) -> f64 {
        self.load_p.iter().sum()
    }

    pub fn total_load_kvar(&self) -> f64 {
        self.load_q.iter().sum()
    }

    pub fn has_load(&self) -> bool {
        self.load_p
            .iter()
            .chain(self.load_q.iter())
            .any(|v| *v != 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    PlainLine,
    SectionalizingSwitch,
    TieSwitch,
    VirtualDgEdge,
    Regulator,
    Transformer,
}

impl EdgeKind {
    /// Edges carrying a switch decision variable.
    pub fn is_switchable(self) -> bool {
        matches!(
            self,
            EdgeKind::SectionalizingSwitch | EdgeKind::TieSwitch | EdgeKind::VirtualDgEdge
        )
    }

    pub fn is_virtual(self) -> bool {
        self == EdgeKind::VirtualDgEdge
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::PlainLine => "plain_line",
            EdgeKind::SectionalizingSwitch => "sectionalizing_switch",
            EdgeKind::TieSwitch => "tie_switch",
            EdgeKind::VirtualDgEdge => "virtual_dg_edge",
            EdgeKind::Regulator => "regulator",
            EdgeKind::Transformer => "transformer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    pub phases: PhaseSet,
    pub normal_closed: bool,
    /// Series resistance matrix in ohms, zero rows/columns for absent phases.
    #[serde(default)]
    pub r: Matrix3,
    #[serde(default)]
    pub x: Matrix3,
    /// Apparent power rating in kVA (all phases together).
    #[serde(default)]
    pub s_rated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dg {
    pub id: String,
    pub bus: String,
    pub p_max: f64,
    pub q_max: f64,
    pub grid_forming: bool,
}

pub const TAP_POSITIONS: usize = 32;
pub const TAP_STEP: f64 = 0.00625;
pub const TAP_MIN_RATIO: f64 = 0.9;

/// Turns ratio of a 1-based tap position.
pub fn tap_ratio(position: usize) -> f64 {
    TAP_MIN_RATIO + TAP_STEP * (position as f64 - 1.0)
}

/// Position whose ratio is closest to 1.0.
pub const NEUTRAL_TAP: usize = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regulator {
    pub edge: String,
    #[serde(default)]
    pub gang: bool,
    /// Initial 1-based tap positions per phase.
    #[serde(default = "default_taps")]
    pub taps: [usize; 3],
}

fn default_taps() -> [usize; 3] {
    [NEUTRAL_TAP; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorBank {
    pub bus: String,
    /// Rated reactive power per phase at 1 pu voltage (kVAr).
    pub q_rated: [f64; 3],
    #[serde(default)]
    pub gang: bool,
    #[serde(default)]
    pub initially_on: bool,
}

/// Delayed-exponential cold load pickup parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClpuParams {
    pub id: String,
    pub s_u: f64,
    pub s_d: f64,
    /// Decay rate per sample.
    pub alpha_decay: f64,
    /// Samples held at `s_u` after pickup before decay starts.
    pub delay_steps: usize,
    pub n_samples: usize,
    #[serde(default = "default_sample_period")]
    pub sample_period_min: f64,
}

fn default_sample_period() -> f64 {
    1.0
}

impl ClpuParams {
    /// Class with `s_u = 2`, `s_d = 1`, a one macro-step hold and decay to
    /// within 1% of `s_d` over four samples.
    pub fn default_class(id: impl Into<String>, substeps_per_action: usize) -> Self {
        let delay = substeps_per_action.max(1);
        ClpuParams {
            id: id.into(),
            s_u: 2.0,
            s_d: 1.0,
            alpha_decay: 100f64.ln() / 4.0,
            delay_steps: delay,
            n_samples: delay + 5,
            sample_period_min: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.s_d > 0.0) {
            return Err(format!("clpu `{}`: s_d must be > 0", self.id));
        }
        if !(self.s_u >= self.s_d) {
            return Err(format!("clpu `{}`: s_u must be >= s_d", self.id));
        }
        if !(self.alpha_decay > 0.0) {
            return Err(format!("clpu `{}`: alpha_decay must be > 0", self.id));
        }
        if self.n_samples == 0 {
            return Err(format!("clpu `{}`: n_samples must be >= 1", self.id));
        }
        if !(self.sample_period_min > 0.0) {
            return Err(format!("clpu `{}`: sample_period_min must be > 0", self.id));
        }
        Ok(())
    }
}

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk network document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Three-phase apparent power base (kVA).
    pub base_kva: f64,
    pub buses: Vec<Bus>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub dgs: Vec<Dg>,
    #[serde(default)]
    pub regulators: Vec<Regulator>,
    #[serde(default)]
    pub capacitors: Vec<CapacitorBank>,
    #[serde(default)]
    pub clpu: Vec<ClpuParams>,
}
