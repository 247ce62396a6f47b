use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkError, NetworkModel, SCHEMA_VERSION};

/// Post-isolation state handed over by fault location and isolation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultScenario {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub faulted_edges: Vec<String>,
    #[serde(default)]
    pub tripped_switches: Vec<String>,
    #[serde(default)]
    pub isolation_switches: Vec<String>,
}

/// Optional run settings carried alongside a scenario. Command-line flags
/// take precedence over these.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow_dg_islanding: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps_per_action: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feeder_loading_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub faulted_edges: Vec<String>,
    #[serde(default)]
    pub tripped_switches: Vec<String>,
    #[serde(default)]
    pub isolation_switches: Vec<String>,
    #[serde(default)]
    pub options: ScenarioOptions,
}

impl ScenarioDocument {
    pub fn new(scenario: FaultScenario, options: ScenarioOptions) -> Self {
        ScenarioDocument {
            schema_version: SCHEMA_VERSION,
            description: scenario.description,
            faulted_edges: scenario.faulted_edges,
            tripped_switches: scenario.tripped_switches,
            isolation_switches: scenario.isolation_switches,
            options,
        }
    }

    pub fn scenario(&self) -> FaultScenario {
        FaultScenario {
            description: self.description.clone(),
            faulted_edges: self.faulted_edges.clone(),
            tripped_switches: self.tripped_switches.clone(),
            isolation_switches: self.isolation_switches.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let doc: ScenarioDocument =
            serde_json::from_str(&text).map_err(|e| NetworkError::Schema(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(NetworkError::Schema(format!(
                "scenario schema_version {} is not supported (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

impl FaultScenario {
    pub fn no_fault() -> Self {
        FaultScenario {
            description: "no fault".into(),
            ..Default::default()
        }
    }

    /// Checks every reference against the model. Tripped and isolation
    /// entries must name switchable edges.
    pub fn validate(&self, model: &NetworkModel) -> Result<(), NetworkError> {
        for id in &self.faulted_edges {
            model
                .edge_index(id)
                .ok_or_else(|| dangling("faulted_edges", id))?;
        }
        for (list, ids) in [
            ("tripped_switches", &self.tripped_switches),
            ("isolation_switches", &self.isolation_switches),
        ] {
            for id in ids {
                let k = model.edge_index(id).ok_or_else(|| dangling(list, id))?;
                if !model.is_switchable(k) {
                    return Err(NetworkError::Invariant(format!(
                        "scenario {list} entry `{id}` is not a switch"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-edge flag: the edge must stay open in every solution.
    pub fn forced_open(&self, model: &NetworkModel) -> Vec<bool> {
        let mut open = vec![false; model.edges().len()];
        for id in self
            .faulted_edges
            .iter()
            .chain(&self.tripped_switches)
            .chain(&self.isolation_switches)
        {
            if let Some(k) = model.edge_index(id) {
                open[k] = true;
            }
        }
        open
    }

    /// Edge states right after isolation: normal state with every forced
    /// edge opened.
    pub fn post_fault_closed(&self, model: &NetworkModel) -> Vec<bool> {
        let forced = self.forced_open(model);
        model
            .normal_closed()
            .into_iter()
            .zip(forced)
            .map(|(closed, f)| closed && !f)
            .collect()
    }
}

fn dangling(list: &str, id: &str) -> NetworkError {
    NetworkError::DanglingReference {
        owner: format!("scenario {list}"),
        kind: "edge",
        id: id.to_string(),
    }
}
