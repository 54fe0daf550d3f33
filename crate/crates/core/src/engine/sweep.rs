//! Parameter sweeps: a base config plus axes of values, run over their Cartesian product.

use serde::{Deserialize, Serialize};

use super::config::GameConfig;
use super::game::{Game, MonteCarloSummary};
use super::EngineError;

/// One swept parameter: a dotted path into the config and the values it takes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: toml::Table,
    #[serde(default)]
    pub axes: Vec<Axis>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    /// `(path, value)` for each axis, in axis order.
    pub params: Vec<(String, String)>,
    pub summary: MonteCarloSummary,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }

    /// Every combination of axis values applied to the base, in row-major order with the
    /// last axis varying fastest. No axes means no rows.
    pub fn points(&self) -> Result<Vec<(Vec<(String, String)>, GameConfig)>, EngineError> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Ok(Vec::new());
        }
        let total: usize = self.axes.iter().map(|a| a.values.len()).product();
        let mut out = Vec::with_capacity(total);
        for mut index in 0..total {
            let mut table = self.base.clone();
            let mut params = vec![(String::new(), String::new()); self.axes.len()];
            for (slot, axis) in self.axes.iter().enumerate().rev() {
                let value = &axis.values[index % axis.values.len()];
                index /= axis.values.len();
                set_path(&mut table, &axis.path, value.clone())?;
                params[slot] = (axis.path.clone(), display(value));
            }
            let cfg: GameConfig =
                toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| EngineError::Config(e.to_string()))?;
            out.push((params, cfg));
        }
        Ok(out)
    }

    /// Runs every point; `trials` overrides the per-point trial count.
    pub fn run(&self, trials: Option<usize>) -> Result<Vec<SweepRow>, EngineError> {
        self.points()?
            .into_iter()
            .map(|(params, cfg)| {
                let trials = trials.unwrap_or(cfg.trials);
                let seed = cfg.seed;
                let (summary, _) = Game::new(cfg)?.monte_carlo(trials, seed)?;
                Ok(SweepRow { params, summary })
            })
            .collect()
    }
}

fn display(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), EngineError> {
    let mut parts = path.split('.').peekable();
    let mut current = table;
    while let Some(key) = parts.next() {
        if key.is_empty() {
            return Err(EngineError::Config(format!("empty segment in axis path {path:?}")));
        }
        if parts.peek().is_none() {
            current.insert(key.to_string(), value);
            return Ok(());
        }
        let next = current.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = next
            .as_table_mut()
            .ok_or_else(|| EngineError::Config(format!("axis path {path:?} passes through a non-table at {key:?}")))?;
    }
    Err(EngineError::Config("empty axis path".into()))
}
