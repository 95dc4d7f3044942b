//! Type projections, causal instance encoding, multi-head instance attention,
//! attentive fusion across metapath views and the MLP scoring head.

mod forward;
mod params;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metapath::{MetapathError, MetapathKind};
use crate::numerics::NumericsError;

pub use forward::{ForwardOutput, ForwardTensors, Model};
pub use params::{Checkpoint, ModelParams, ParamSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metapath(#[from] MetapathError),
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Full model and its ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Attention over metapath-induced tail neighbors, no instance encoding.
    #[serde(rename = "woMP-i")]
    WoMpI,
    /// Messages reach only the head and tail of each instance.
    #[serde(rename = "woMP-ii")]
    WoMpII,
    /// Symmetric length-5 metapaths, endpoints only.
    #[serde(rename = "woMP-iii")]
    WoMpIII,
    /// Pairwise length-2 metapaths.
    #[serde(rename = "woTM")]
    WoTm,
    /// Unweighted mean instead of attentive fusion.
    #[serde(rename = "woAF")]
    WoAf,
    /// One-hot node features.
    #[serde(rename = "woBF")]
    WoBf,
}

impl Variant {
    pub const ALL: [Variant; 7] = [Variant::Full, Variant::WoMpI, Variant::WoMpII, Variant::WoMpIII, Variant::WoTm, Variant::WoAf, Variant::WoBf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoMpI => "woMP-i",
            Variant::WoMpII => "woMP-ii",
            Variant::WoMpIII => "woMP-iii",
            Variant::WoTm => "woTM",
            Variant::WoAf => "woAF",
            Variant::WoBf => "woBF",
        }
    }

    pub fn metapath_kind(self) -> MetapathKind {
        match self {
            Variant::WoMpIII => MetapathKind::Symmetric5,
            Variant::WoTm => MetapathKind::Pairwise2,
            _ => MetapathKind::Causal3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown variant `{s}` (expected one of full, woMP-i, woMP-ii, woMP-iii, woTM, woAF, woBF)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Projected dimension F′.
    pub hidden_dim: usize,
    /// Attention heads K.
    pub heads: usize,
    pub leaky_slope: f64,
    /// Fusion attention dimension d_a.
    pub fusion_dim: usize,
    pub mlp_hidden: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden_dim: 64, heads: 4, leaky_slope: 0.2, fusion_dim: 128, mlp_hidden: 64, variant: Variant::Full }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.heads == 0 || self.fusion_dim == 0 || self.mlp_hidden == 0 {
            return Err(ModelError::InvalidConfig("dimensions and head count must be at least 1".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(ModelError::InvalidConfig("leaky_slope must be finite".into()));
        }
        Ok(())
    }

    /// Width of a fused node embedding, K·F′.
    pub fn embed_dim(&self) -> usize {
        self.heads * self.hidden_dim
    }
}
