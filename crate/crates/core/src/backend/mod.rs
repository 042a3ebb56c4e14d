//! The three neural capabilities the pipeline needs, behind one trait.
//!
//! A backend encodes text, encodes images, and runs prompt-conditioned
//! detection in a single forward pass over all prompts. [`mock::MockWorld`]
//! is a deterministic synthetic implementation; [`external::ExternalFiles`]
//! serves precomputed outputs of an out-of-process model runner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::embedding::UnitEmbedding;
use crate::error::{Error, Result};
use crate::geometry::Detection;

pub mod emb1;
pub mod external;
pub mod mock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    S,
    M,
    L,
}

impl ModelSize {
    pub const ALL: [ModelSize; 3] = [ModelSize::S, ModelSize::M, ModelSize::L];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelSize::S => "s",
            ModelSize::M => "m",
            ModelSize::L => "l",
        }
    }
}

impl fmt::Display for ModelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "small" => Ok(ModelSize::S),
            "m" | "medium" => Ok(ModelSize::M),
            "l" | "large" => Ok(ModelSize::L),
            _ => Err(Error::InvalidConfig(format!("unknown model size `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub name: String,
    pub dim: usize,
    pub model_size: ModelSize,
}

/// Text encoder, image encoder and prompt-conditioned detector sharing one
/// latent space.
///
/// Implementations must be deterministic and callable from several threads
/// at once.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn encode_text(&self, text: &str) -> Result<UnitEmbedding>;

    /// Accepts images of any size.
    fn encode_image(&self, img: &Image) -> Result<UnitEmbedding>;

    /// Detects with all prompts at once; `class_index` of each detection is
    /// the position of its prompt.
    fn detect(&self, img: &Image, prompts: &[UnitEmbedding]) -> Result<Vec<Detection>>;
}

/// Checks the detector output contract.
pub fn validate_detections(dets: &[Detection], num_prompts: usize) -> Result<()> {
    for d in dets {
        if d.class_index >= num_prompts {
            return Err(Error::BackendFailure(format!(
                "detection class index {} with only {num_prompts} prompts",
                d.class_index
            )));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::BackendFailure(format!(
                "detection score {} outside [0, 1]",
                d.score
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_size_parse() {
        assert_eq!("L".parse::<ModelSize>().unwrap(), ModelSize::L);
        assert_eq!("small".parse::<ModelSize>().unwrap(), ModelSize::S);
        assert!("xl".parse::<ModelSize>().is_err());
        assert_eq!(serde_json::to_string(&ModelSize::M).unwrap(), "\"m\"");
    }
}
