//! Plain key-value configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown keys are
//! rejected. Example with every key at its default:
//!
//! ```text
//! # network
//! preset = desk            # desk | paper
//! conv_filters = 16,32,32  # overrides the preset conv stack
//! batch_norm = false
//! fc_widths = 64,32
//! network_seed = 1
//! # training
//! gamma = 1.0
//! target_sync_period = 500
//! batch_size = 32
//! iterations = 2000
//! reward_scale = 0.01
//! train_seed = 0
//! # search
//! strategy = weighted      # optimal | weighted | ehc
//! heuristic_weight = 5
//! node_budget = 200000
//! ```

use thiserror::Error;

use crate::learner::TrainConfig;
use crate::nn::{ConvLayerSpec, NetworkSpec};
use crate::search::{SearchConfig, Strategy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("line {0}: unknown key `{1}`")]
    UnknownKey(usize, String),
    #[error("line {0}: bad value for `{1}`")]
    BadValue(usize, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetPreset {
    Desk,
    Paper,
}

/// Network shape settings; input dims are supplied by the data.
#[derive(Clone, Debug)]
pub struct NetworkSettings {
    pub preset: NetPreset,
    pub conv_filters: Option<Vec<usize>>,
    pub batch_norm: bool,
    pub fc_widths: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for NetworkSettings {
    fn default() -> NetworkSettings {
        NetworkSettings {
            preset: NetPreset::Desk,
            conv_filters: None,
            batch_norm: false,
            fc_widths: None,
            seed: 1,
        }
    }
}

impl NetworkSettings {
    pub fn to_spec(&self, rows: usize, cols: usize, channels: usize) -> NetworkSpec {
        let mut spec = match self.preset {
            NetPreset::Desk => NetworkSpec::desk(rows, cols, channels, self.batch_norm, self.seed),
            NetPreset::Paper => {
                NetworkSpec::paper(rows, cols, channels, self.batch_norm, self.seed)
            }
        };
        if let Some(filters) = &self.conv_filters {
            spec.conv = filters
                .iter()
                .map(|&f| ConvLayerSpec { filters: f, batch_norm: self.batch_norm })
                .collect();
        }
        if let Some(widths) = &self.fc_widths {
            spec.fc = widths.clone();
        }
        spec
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub network: NetworkSettings,
    pub train: TrainConfig,
    pub search: SearchConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            network: NetworkSettings::default(),
            train: TrainConfig::default(),
            search: SearchConfig::weighted(200_000),
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(lineno))?;
        let key = key.trim();
        let value = value.trim();
        let bad = || ConfigError::BadValue(lineno, key.to_string());
        match key {
            "preset" => {
                config.network.preset = match value {
                    "desk" => NetPreset::Desk,
                    "paper" => NetPreset::Paper,
                    _ => return Err(bad()),
                }
            }
            "conv_filters" => config.network.conv_filters = Some(parse_list(value).ok_or_else(bad)?),
            "batch_norm" => config.network.batch_norm = value.parse().map_err(|_| bad())?,
            "fc_widths" => config.network.fc_widths = Some(parse_list(value).ok_or_else(bad)?),
            "network_seed" => config.network.seed = value.parse().map_err(|_| bad())?,
            "gamma" => config.train.gamma = value.parse().map_err(|_| bad())?,
            "target_sync_period" => {
                config.train.target_sync_period = parse_positive(value).ok_or_else(bad)?
            }
            "batch_size" => config.train.batch_size = parse_positive(value).ok_or_else(bad)?,
            "iterations" => config.train.iterations = parse_positive(value).ok_or_else(bad)?,
            "reward_scale" => {
                config.train.reward_scale = value.parse().map_err(|_| bad())?;
                if config.train.reward_scale <= 0.0 {
                    return Err(bad());
                }
            }
            "train_seed" => config.train.seed = value.parse().map_err(|_| bad())?,
            "strategy" => {
                config.search.strategy = Strategy::from_name(value).ok_or_else(bad)?;
                if config.search.strategy == Strategy::Optimal {
                    config.search.heuristic_weight = 1;
                }
            }
            "heuristic_weight" => {
                config.search.heuristic_weight = parse_positive(value).ok_or_else(bad)? as u32
            }
            "node_budget" => config.search.node_budget = value.parse().map_err(|_| bad())?,
            _ => return Err(ConfigError::UnknownKey(lineno, key.to_string())),
        }
    }
    Ok(config)
}

fn parse_list(value: &str) -> Option<Vec<usize>> {
    let items: Option<Vec<usize>> =
        value.split(',').map(|s| s.trim().parse::<usize>().ok()).collect();
    items.filter(|v| !v.is_empty() && v.iter().all(|&x| x > 0))
}

fn parse_positive(value: &str) -> Option<usize> {
    value.parse::<usize>().ok().filter(|&v| v > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_empty_config() {
        let config = parse_config("").unwrap();
        assert_eq!(config.train.gamma, 1.0);
        assert_eq!(config.train.target_sync_period, 500);
        assert_eq!(config.train.batch_size, 32);
        assert_eq!(config.train.reward_scale, 0.01);
        assert_eq!(config.search.heuristic_weight, 5);
        assert_eq!(config.network.preset, NetPreset::Desk);
    }

    #[test]
    fn parses_every_key() {
        let text = "\
# network
preset = paper
conv_filters = 8,8
batch_norm = true
fc_widths = 16,8
network_seed = 4
# training
gamma = 0.9
target_sync_period = 100
batch_size = 16
iterations = 50
reward_scale = 0.02
train_seed = 9
# search
strategy = ehc
heuristic_weight = 3
node_budget = 1234
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.network.preset, NetPreset::Paper);
        assert_eq!(config.network.conv_filters, Some(vec![8, 8]));
        assert!(config.network.batch_norm);
        assert_eq!(config.network.fc_widths, Some(vec![16, 8]));
        assert_eq!(config.network.seed, 4);
        assert_eq!(config.train.gamma, 0.9);
        assert_eq!(config.train.target_sync_period, 100);
        assert_eq!(config.train.batch_size, 16);
        assert_eq!(config.train.iterations, 50);
        assert_eq!(config.train.reward_scale, 0.02);
        assert_eq!(config.train.seed, 9);
        assert_eq!(config.search.strategy, Strategy::Ehc);
        assert_eq!(config.search.heuristic_weight, 3);
        assert_eq!(config.search.node_budget, 1234);
        let spec = config.network.to_spec(5, 5, 9);
        assert_eq!(spec.conv.len(), 2);
        assert!(spec.conv.iter().all(|c| c.batch_norm));
        assert_eq!(spec.fc, vec![16, 8]);
    }

    #[test]
    fn optimal_strategy_pins_weight_to_one() {
        let config = parse_config("strategy = optimal\n").unwrap();
        assert_eq!(config.search.strategy, Strategy::Optimal);
        assert_eq!(config.search.heuristic_weight, 1);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert_eq!(
            parse_config("nonsense = 1\n").unwrap_err(),
            ConfigError::UnknownKey(1, "nonsense".into())
        );
        assert_eq!(
            parse_config("batch_size = zero\n").unwrap_err(),
            ConfigError::BadValue(1, "batch_size".into())
        );
        assert_eq!(parse_config("batch_size\n").unwrap_err(), ConfigError::BadLine(1));
        assert_eq!(
            parse_config("reward_scale = -1\n").unwrap_err(),
            ConfigError::BadValue(1, "reward_scale".into())
        );
    }
}
