use serde::{Deserialize, Serialize};

use crate::envsim::{Suite, Task};
use crate::error::{Error, Result};
use crate::transformer::LangAttnPolicy;

/// One shared encoder over all modalities, or separate language/vision
/// stacks joined by a cross-modality encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    OneStream,
    TwoStream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub lang_attn_policy: LangAttnPolicy,
    /// Fuse attention-weighted language and vision features into the state.
    pub matching: bool,
    pub task: Task,
    /// Number of learned language positions.
    pub max_instruction_len: usize,
    /// Two-stream only: layers in the language, vision and cross stacks.
    pub stream_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            head_dim: 8,
            ffn_dim: 64,
            dropout: 0.0,
            variant: Variant::OneStream,
            lang_attn_policy: LangAttnPolicy::InitOnly,
            matching: true,
            task: Task::R2r,
            max_instruction_len: 32,
            stream_layers: 1,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(
                "layers, heads, head_dim and ffn_dim must be positive".into(),
            ));
        }
        if self.hidden() < 2 {
            return Err(Error::Config("hidden size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.max_instruction_len < 3 {
            return Err(Error::Config(
                "max_instruction_len must allow [CLS] w [SEP]".into(),
            ));
        }
        if self.variant == Variant::TwoStream {
            if self.task == Task::Reverie {
                return Err(Error::Config(
                    "the two-stream variant supports the r2r task only".into(),
                ));
            }
            if self.stream_layers == 0 {
                return Err(Error::Config("stream_layers must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Input sizes fixed by the environment suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDims {
    pub vocab: usize,
    /// Scene token length `feat_dim + dir_dim`.
    pub scene_dim: usize,
    pub object_feat_dim: usize,
    pub dir_dim: usize,
}

impl InputDims {
    pub fn from_suite(suite: &Suite) -> Self {
        Self {
            vocab: suite.vocab.len(),
            scene_dim: suite.features.scene_dim(),
            object_feat_dim: suite.features.feat_dim,
            dir_dim: suite.features.dir_dim(),
        }
    }
}
