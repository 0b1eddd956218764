//! Experiment orchestration: resolved configs, the named-experiment
//! registry, training runs with metric logging, and seed aggregation.
//!
//! Each seed writes `<root>/<id>/seed-<seed>/metrics.csv` and a
//! `manifest.json` next to it holding the resolved config.

mod aggregate;
mod config;
mod metrics;
pub mod overrides;
mod registry;
mod run;

pub use aggregate::{
    aggregate_seeds, aggregate_tables, delay_metric, Delay, SeedAggregate, DEFAULT_TEST_THRESHOLD,
    DEFAULT_TRAIN_THRESHOLD,
};
pub use config::{ExperimentConfig, FrequencyProbe, SpectralLogging, TaskConfig, TaskData};
pub use metrics::{
    csv_header, read_metrics, write_metrics, Manifest, MetricsRecord, MetricsTable, RunStatus, LIBRARY_VERSION,
    SCHEMA_VERSION,
};
pub use registry::{lookup, registry, Recipe, RegistryEntry, MNIST_DIR_ENV, MODULO_DAMPING};
pub use run::{run_experiment, run_seed, seed_dir, Provenance, RunOptions, RunSummary, SeedOutcome, SeedRun};

use std::path::Path;

use crate::error::{Error, Result};

/// A validated config together with where it came from.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
}

const RECIPE_KEYS: [&str; 6] = ["optimizer", "scale", "damping", "learning_rate", "iterations", "switch_at"];

/// `scale` and `recipe.scale` address the recipe; anything else addresses
/// the resolved config.
fn recipe_key(key: &str) -> Option<&str> {
    let bare = match key.strip_prefix("recipe.") {
        Some(k) => k,
        None if !key.contains('.') => key,
        None => return None,
    };
    RECIPE_KEYS.contains(&bare).then_some(bare)
}

fn encode<T: serde::Serialize>(v: &T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| Error::config(format!("cannot encode config: {e}")))
}

/// Applies `key=value` overrides to a resolved config and validates the
/// result.
pub fn apply_config_overrides(config: ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut tree = encode(&config)?;
    for o in overrides {
        overrides::apply_override(&mut tree, o)?;
    }
    let config: ExperimentConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(format!("bad override: {}", e.message())))?;
    config.validate()?;
    Ok(config)
}

/// Builds a registry experiment, applying recipe overrides before the
/// recipe is expanded and config overrides after.
pub fn resolve_registry(id: &str, overrides: &[String]) -> Result<Resolved> {
    let entry = lookup(id)?;
    let mut recipe_tree = encode(&(entry.default_recipe)())?;
    let mut rest = Vec::new();
    for o in overrides {
        let (key, value) = overrides::parse_assignment(o)?;
        match recipe_key(&key) {
            Some(k) => {
                recipe_tree
                    .as_table_mut()
                    .expect("recipe encodes as a table")
                    .insert(k.to_string(), value);
            }
            None => rest.push(o.clone()),
        }
    }
    let recipe: Recipe = recipe_tree
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(format!("bad recipe override: {}", e.message())))?;
    let config = apply_config_overrides(entry.resolve(&recipe)?, &rest)?;
    Ok(Resolved {
        config,
        provenance: Provenance {
            registry_id: Some(id.to_string()),
            recipe: Some(recipe),
            overrides: overrides.to_vec(),
        },
    })
}

/// Loads a TOML config file and applies overrides.
pub fn resolve_file(path: &Path, overrides: &[String]) -> Result<Resolved> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = ExperimentConfig::from_toml(&text)?;
    config.validate()?;
    let config = apply_config_overrides(config, overrides)?;
    Ok(Resolved {
        config,
        provenance: Provenance {
            registry_id: None,
            recipe: None,
            overrides: overrides.to_vec(),
        },
    })
}
