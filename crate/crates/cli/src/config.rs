//! Run configuration and the per-stage hashes that tie artifacts together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cardiotwin_core::forward::SimSettings;
use cardiotwin_core::geometry::PhantomConfig;
use cardiotwin_core::hash::config_hash;
use cardiotwin_core::inverse::SearchSpec;
use cardiotwin_psdcm::train::TrainConfig;

use crate::artifact::{input_error, read_text};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomStage {
    pub base: PhantomConfig,
    pub n_meshes: usize,
    /// Maximum relative change of each axis.
    pub spread: f64,
}

impl Default for PhantomStage {
    fn default() -> Self {
        PhantomStage {
            base: PhantomConfig::default(),
            n_meshes: 10,
            spread: 0.15,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateStage {
    /// Index into the phantom family.
    pub mesh: usize,
    /// `[fiber, sheet, normal, endo]` in cm/s; range midpoints when absent.
    pub cv: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortStage {
    pub per_mesh: usize,
}

impl Default for CohortStage {
    fn default() -> Self {
        CohortStage { per_mesh: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineStage {
    /// Number of TEST subjects to invert, in id order.
    pub subjects: usize,
    pub search: SearchSpec,
}

impl Default for BaselineStage {
    fn default() -> Self {
        BaselineStage {
            subjects: 3,
            search: SearchSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub phantom: PhantomStage,
    pub simulation: SimSettings,
    pub simulate: SimulateStage,
    pub cohort: CohortStage,
    pub train: TrainConfig,
    pub baseline: BaselineStage,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The training config with the global seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.model.seed = self.seed;
        t
    }

    /// Hash of the whole configuration.
    pub fn run_hash(&self) -> String {
        config_hash(self)
    }

    pub fn phantom_hash(&self) -> String {
        config_hash(&(self.seed, &self.phantom))
    }

    pub fn simulate_hash(&self) -> String {
        config_hash(&(self.phantom_hash(), &self.simulation, &self.simulate))
    }

    pub fn cohort_hash(&self) -> String {
        config_hash(&(self.phantom_hash(), &self.simulation, &self.cohort))
    }

    pub fn train_hash(&self) -> String {
        config_hash(&(self.cohort_hash(), &self.train_config()))
    }

    pub fn baseline_hash(&self) -> String {
        config_hash(&(self.cohort_hash(), &self.baseline))
    }
}
