#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restoration::netmodel::{
    synth_multifeeder, synth_scenario, FaultScenario, NetworkModel, SynthSpec,
};
use restoration::stage1::{decision_edges_for_tests, Stage1Options};
use restoration::topology::{enumerate_cycles, Cycle, DEFAULT_CYCLE_CAP};

pub struct Case {
    pub model: NetworkModel,
    pub scenario: FaultScenario,
    pub cycles: Vec<Cycle>,
}

impl Case {
    pub fn new(model: NetworkModel, scenario: FaultScenario) -> Self {
        let cycles = enumerate_cycles(&model, DEFAULT_CYCLE_CAP).expect("cycles");
        Case {
            model,
            scenario,
            cycles,
        }
    }
}

/// Number of binaries the oracle would enumerate for a case.
pub fn oracle_binaries(
    model: &NetworkModel,
    scenario: &FaultScenario,
    options: &Stage1Options,
) -> usize {
    let free = decision_edges_for_tests(model, scenario, options.allow_dg_islanding)
        .iter()
        .filter(|f| f.is_none())
        .count();
    let loads = model
        .buses()
        .iter()
        .filter(|b| !b.is_source && b.has_load() && b.load_switchable)
        .count();
    free + loads
}

/// Random small multi-feeder case with a faulted line, at most
/// `max_binaries` oracle binaries.
pub fn small_case(seed: u64, max_binaries: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..200u64 {
        let feeders = rng.gen_range(2..=3);
        let mut spec = SynthSpec::new(
            feeders,
            rng.gen_range(4..=7),
            rng.gen_range(1..=feeders),
            rng.gen_range(0..=1),
            seed * 1000 + attempt,
        );
        spec.head_capacity_factor = rng.gen_range(1.0..1.8);
        spec.switch_fraction = 0.25;
        spec.switchable_load_fraction = 0.25;
        let Ok(model) = synth_multifeeder(&spec) else {
            continue;
        };
        let Some(scenario) = synth_scenario(&model, seed ^ attempt) else {
            continue;
        };
        if oracle_binaries(&model, &scenario, &Stage1Options::default()) <= max_binaries {
            return Case::new(model, scenario);
        }
    }
    panic!("no small case found for seed {seed}");
}

/// Random multi-feeder case with CLPU on every load, for sequencing tests.
pub fn clpu_case(seed: u64, substeps: usize) -> Option<Case> {
    sequencing_case(seed, Some(substeps))
}

/// Same networks as [`clpu_case`], optionally without CLPU.
pub fn sequencing_case(seed: u64, clpu_substeps: Option<usize>) -> Option<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919));
    let feeders = rng.gen_range(2..=3);
    let mut spec = SynthSpec::new(
        feeders,
        rng.gen_range(4..=7),
        rng.gen_range(1..=feeders),
        rng.gen_range(0..=1),
        seed,
    );
    spec.head_capacity_factor = rng.gen_range(1.6..2.6);
    spec.switch_fraction = 0.5;
    spec.switchable_load_fraction = 0.25;
    spec.clpu_substeps = clpu_substeps;
    let model = synth_multifeeder(&spec).ok()?;
    let scenario = synth_scenario(&model, seed)?;
    Some(Case::new(model, scenario))
}

/// Like [`clpu_case`] but tries several fault locations and keeps the first
/// whose Stage-1 plan needs at least one switch action.
pub fn restorable_case(
    seed: u64,
    substeps: usize,
) -> Option<(Case, restoration::stage1::Stage1Solution)> {
    let options = Stage1Options::default();
    let base = sequencing_case(seed, Some(substeps))?;
    for k in 0..12u64 {
        let Some(scenario) = synth_scenario(&base.model, seed.wrapping_mul(31).wrapping_add(k))
        else {
            continue;
        };
        let case = Case::new(base.model.clone(), scenario);
        let Ok(target) =
            restoration::stage1::solve_stage1(&case.model, &case.scenario, &case.cycles, &options)
        else {
            continue;
        };
        if !target.switch_ops.is_empty() {
            return Some((case, target));
        }
    }
    None
}

/// Hand-built load-transfer case from `data/transfer`.
pub fn transfer_case() -> Case {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/transfer");
    let model = restoration::netmodel::load_network(dir.join("network.json")).expect("network");
    let scenario = restoration::netmodel::ScenarioDocument::load(dir.join("scenario.json"))
        .expect("scenario")
        .scenario();
    Case::new(model, scenario)
}
