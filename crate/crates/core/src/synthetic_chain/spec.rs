use std::fmt;
use std::path::Path;

use serde::Deserialize;

use super::SynthError;
use crate::classification::DEFAULT_BUCKET_BLOCKS;

/// An exact decimal share such as `0.84`, kept as `units / 10^scale`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Share {
    units: u64,
    scale: u32,
}

impl Share {
    pub fn parse(text: &str) -> Result<Share, String> {
        let text = text.trim();
        let (int, frac) = text.split_once('.').unwrap_or((text, ""));
        if int.is_empty() && frac.is_empty() {
            return Err("empty share".into());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(format!("share {text:?} is not a plain decimal"));
        }
        let frac = frac.trim_end_matches('0');
        if frac.len() > 18 {
            return Err(format!("share {text:?} has too many digits"));
        }
        let scale = frac.len() as u32;
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|e| format!("{e}"))? };
        let frac_units: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|e| format!("{e}"))? };
        let units = int
            .checked_mul(10u64.pow(scale))
            .and_then(|v| v.checked_add(frac_units))
            .ok_or_else(|| format!("share {text:?} overflows"))?;
        let share = Share { units, scale };
        if units > 10u64.pow(scale) {
            return Err(format!("share {text} exceeds 1"));
        }
        Ok(share)
    }

    /// `total * self` when that is a whole number.
    pub fn apply(&self, total: u64) -> Option<u64> {
        let den = 10u128.pow(self.scale);
        let num = total as u128 * self.units as u128;
        (num % den == 0).then(|| (num / den) as u64)
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let den = 10u64.pow(self.scale);
        if self.scale == 0 {
            write!(f, "{}", self.units)
        } else {
            write!(
                f,
                "{}.{:0width$}",
                self.units / den,
                self.units % den,
                width = self.scale as usize
            )
        }
    }
}

impl<'de> Deserialize<'de> for Share {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            // shortest round-trip form, so 0.84 reads back as "0.84"
            Raw::Float(f) => format!("{f}"),
            Raw::Text(s) => s,
        };
        Share::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidencePattern {
    #[default]
    Deposit,
    Redeem,
    /// Alternates deposit and redeem, starting with deposit.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootPlan {
    pub id: String,
    #[serde(default = "one")]
    pub members: u32,
    #[serde(default)]
    pub initial_distance: u32,
}

/// A planted wrapping edge. `parent` names a root (its first member), a
/// specific member as `ROOT/k`, or the child of another edge.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgePlan {
    pub parent: String,
    pub child: String,
    pub evidence_txs: u64,
    pub holders: u64,
    #[serde(default)]
    pub pattern: EvidencePattern,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePlan {
    /// Single mints of untracked tokens.
    #[serde(default)]
    pub airdrops_per_bucket: u64,
    /// Holder-to-holder transfers of untracked tokens.
    #[serde(default)]
    pub untracked_per_bucket: u64,
    /// A root transfer and an unrelated untracked mint sharing a
    /// transaction. Draws on the root's plain quota.
    #[serde(default)]
    pub near_misses_per_bucket: u64,
    /// Wrapper-like pairs just below the default thresholds, placed in the
    /// evidence bucket.
    #[serde(default)]
    pub decoys: u64,
    #[serde(default = "default_holder_pool")]
    pub holder_pool: u64,
}

/// Per-bucket targets for one root: total labeled transfers and the exact
/// fraction of them that are composed, indexed by bucket.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketPlan {
    pub root: String,
    pub transfers: Vec<u64>,
    pub composed_share: Vec<Share>,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub from_block: u64,
    pub to_block: u64,
    #[serde(default = "default_bucket_blocks")]
    pub bucket_blocks: u64,
    #[serde(default)]
    pub evidence_bucket: u32,
    pub roots: Vec<RootPlan>,
    #[serde(default)]
    pub edges: Vec<EdgePlan>,
    #[serde(default)]
    pub noise: NoisePlan,
    #[serde(default)]
    pub plan: Vec<BucketPlan>,
}

impl Default for NoisePlan {
    fn default() -> Self {
        NoisePlan {
            airdrops_per_bucket: 0,
            untracked_per_bucket: 0,
            near_misses_per_bucket: 0,
            decoys: 0,
            holder_pool: default_holder_pool(),
        }
    }
}

fn one() -> u32 {
    1
}

fn default_holder_pool() -> u64 {
    64
}

fn default_bucket_blocks() -> u64 {
    DEFAULT_BUCKET_BLOCKS
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<ScenarioSpec, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSpec, SynthError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}
