//! Run configuration: one TOML file with a section per command, plus
//! `--set` overrides applied to the command's section before parsing.

use std::path::Path;

use ktl::experiments::gaussian::GaussianSuiteConfig;
use ktl::experiments::lognormal::LognormalExampleConfig;
use ktl::experiments::options::OptionsExperimentConfig;
use ktl::experiments::simulation::SimulationRunConfig;
use ktl::experiments::transport_run::TransportRunConfig;
use ktl::gaussian::GaussianInputs;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Transport,
    Gaussian,
    Simulate,
    Options,
    Lognormal,
}

impl Command {
    pub fn section(self) -> &'static str {
        match self {
            Self::Transport => "transport",
            Self::Gaussian => "gaussian",
            Self::Simulate => "simulate",
            Self::Options => "options",
            Self::Lognormal => "lognormal",
        }
    }

    /// Dotted key the `--seed` flag writes to, when the command is random.
    pub fn seed_key(self) -> Option<&'static str> {
        match self {
            Self::Simulate => Some("sim.seed"),
            Self::Options | Self::Lognormal => Some("seed"),
            Self::Transport | Self::Gaussian => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianCommandConfig {
    /// Closed-form equilibrium to report.
    pub equilibrium: GaussianInputs,
    /// Also run the numerical oracle suite (minutes).
    pub run_suite: bool,
    pub suite: GaussianSuiteConfig,
    /// Largest identity error accepted by the check.
    pub tolerance: f64,
}

impl Default for GaussianCommandConfig {
    fn default() -> Self {
        Self {
            equilibrium: GaussianInputs::univariate(0.0, 1.0, 1.0, 0.2, 1.0, 1.0),
            run_suite: false,
            suite: GaussianSuiteConfig::default(),
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub transport: TransportRunConfig,
    pub gaussian: GaussianCommandConfig,
    pub simulate: SimulationRunConfig,
    pub options: OptionsExperimentConfig,
    pub lognormal: LognormalExampleConfig,
}

/// Parses `text`, applies `key=value` overrides under the command's
/// section and validates the whole tree.
pub fn load(text: &str, command: Command, overrides: &[(String, String)]) -> Result<RunConfig, String> {
    let mut root: Table = text.parse().map_err(|e| format!("config: {e}"))?;
    if !overrides.is_empty() {
        let defaults = Value::try_from(RunConfig::default()).map_err(|e| e.to_string())?;
        let defaults = &defaults[command.section()];
        let section = root
            .entry(command.section())
            .or_insert_with(|| Value::Table(Table::new()));
        for (key, value) in overrides {
            set_path(section, Some(defaults), key, parse_value(value)).map_err(|e| format!("--set {key}: {e}"))?;
        }
    }
    RunConfig::deserialize(Value::Table(root)).map_err(|e| format!("config: {e}"))
}

pub fn load_file(path: Option<&Path>, command: Command, overrides: &[(String, String)]) -> Result<RunConfig, String> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => String::new(),
    };
    load(&text, command, overrides)
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets a dotted leaf; tables missing along the way are seeded from the
/// matching default subtree so that records without serde defaults stay
/// complete.
fn set_path(node: &mut Value, defaults: Option<&Value>, key: &str, value: Value) -> Result<(), String> {
    let mut parts = key.split('.').peekable();
    let mut cur = node;
    let mut def = defaults;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err("empty key segment".into());
        }
        let Value::Table(table) = cur else {
            return Err(format!("'{part}' is inside a non-table value"));
        };
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        def = def.and_then(|d| d.get(part));
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| def.cloned().unwrap_or_else(|| Value::Table(Table::new())));
    }
    Err("empty key".into())
}

pub fn split_override(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got '{raw}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(load("", Command::Options, &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load("[options]\nbogus = 1\n", Command::Options, &[]).is_err());
        assert!(load("[nope]\n", Command::Options, &[]).is_err());
    }

    #[test]
    fn overrides_reach_nested_leaves() {
        let o = vec![
            ("n_paths".to_string(), "500".to_string()),
            ("pipeline.source_nodes".to_string(), "61".to_string()),
        ];
        let cfg = load("[options]\nseed = 3\n", Command::Options, &o).unwrap();
        assert_eq!(cfg.options.n_paths, 500);
        assert_eq!(cfg.options.pipeline.source_nodes, 61);
        assert_eq!(cfg.options.seed, 3);
    }

    #[test]
    fn overrides_seed_missing_records_from_defaults() {
        let o = vec![("equilibrium.alpha".to_string(), "0".to_string())];
        let cfg = load("", Command::Gaussian, &o).unwrap();
        assert_eq!(cfg.gaussian.equilibrium.alpha, 0.0);
        assert_eq!(cfg.gaussian.equilibrium.m_hat, GaussianCommandConfig::default().equilibrium.m_hat);
    }

    #[test]
    fn override_values_parse_as_toml() {
        assert_eq!(parse_value("2.5"), Value::Float(2.5));
        assert_eq!(parse_value("[1, 2]").as_array().unwrap().len(), 2);
        assert_eq!(parse_value("nearest"), Value::String("nearest".into()));
    }
}
