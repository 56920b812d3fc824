//! JSON configuration of each subcommand.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use flexctmc::ctmc::AdaptiveConfig;
use flexctmc::learn::TrainConfig;
use flexctmc::sequence::Alphabet;
use flexctmc::target::maze::MazeSpec;
use flexctmc::target::{bundled, load_pmf, PmfSpec};
use flexctmc::{SchedulePair, TargetDistribution, Token};

/// A malformed or unreadable configuration. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Where the target distribution comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    /// One of `two_atom`, `mixed_length`, `single`.
    Bundled(String),
    Pmf(PmfSpec),
    Maze(MazeSpec),
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Bundled("two_atom".into())
    }
}

/// A target together with the glyph map used to print its sequences.
pub struct LoadedTarget {
    pub target: TargetDistribution,
    pub alphabet: Alphabet,
}

impl TargetSpec {
    pub fn load(&self) -> anyhow::Result<LoadedTarget> {
        Ok(match self {
            TargetSpec::Bundled(name) => {
                let target = bundled::all()
                    .into_iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t)
                    .ok_or_else(|| ConfigError(format!("unknown bundled target {name:?}")))?;
                LoadedTarget {
                    target,
                    alphabet: bundled::alphabet(),
                }
            }
            TargetSpec::Pmf(spec) => LoadedTarget {
                target: load_pmf(spec)?,
                alphabet: with_pad_glyph(spec.alphabet()?),
            },
            TargetSpec::Maze(spec) => LoadedTarget {
                target: spec.build()?.1,
                alphabet: Alphabet::Numeric,
            },
        })
    }
}

/// Appends a glyph for the padding token `vocab` so fixed-length outputs
/// print. Bundled alphabets already carry one.
fn with_pad_glyph(a: Alphabet) -> Alphabet {
    match a {
        Alphabet::Glyphs { mut glyphs, mask } => {
            if let Some(g) = "#$%&@".chars().find(|c| !glyphs.contains(c) && *c != mask) {
                glyphs.push(g);
            }
            Alphabet::Glyphs { glyphs, mask }
        }
        Alphabet::Numeric => Alphabet::Numeric,
    }
}

/// The padding token of the fixed-length baseline: the first id past the
/// vocabulary.
pub fn pad_token(target: &TargetDistribution) -> Token {
    Token(target.vocab_size() as u32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub seed: u64,
    pub target: TargetSpec,
    pub schedules: SchedulePair,
    pub sampler: AdaptiveConfig,
    pub samples: usize,
    /// `flex`, `mdm`, `perturbed`, or the path of a trained model.
    pub rate_source: String,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            seed: 0,
            target: TargetSpec::default(),
            schedules: SchedulePair::linear(),
            sampler: AdaptiveConfig::default(),
            samples: 10_000,
            rate_source: "flex".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Flex,
    Mdm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub seed: u64,
    pub target: TargetSpec,
    pub schedules: SchedulePair,
    pub kind: OracleKind,
    pub times: Vec<f64>,
    /// States to query, written with the target's glyphs. Empty queries
    /// every reachable state.
    pub states: Vec<String>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            target: TargetSpec::default(),
            schedules: SchedulePair::linear(),
            kind: OracleKind::Flex,
            times: vec![0.25, 0.5, 0.75],
            states: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub target: TargetSpec,
    pub schedules: SchedulePair,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub seed: u64,
    pub maze: MazeSpec,
    pub prompts: usize,
    pub sampler: AdaptiveConfig,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            seed: 0,
            maze: MazeSpec::default(),
            prompts: 500,
            sampler: AdaptiveConfig {
                steps: 256,
                ..Default::default()
            },
        }
    }
}
