//! Synthetic navigation environments: graphs, poses, features, instructions
//! and teacher actions.

mod episode;
mod features;
mod instruction;
mod pose;
pub mod seeding;
mod world;

use serde::{Deserialize, Serialize};

pub use episode::{generate_suite, Episode, Suite, SuiteConfig, SUITE_FORMAT, SUITE_VERSION};
pub use features::{
    directional_encoding, landmark_prototype, object_features, object_prototype, scene_features,
    Candidate, FeatureConfig, ObjectToken, Observation,
};
pub use instruction::{synthesize_instruction, Vocab, CLS, N_TURN_WORDS, PAD, SEP, STOP_WORD};
pub use pose::{distance_to_goal, take_action, teacher_action, Action, AgentPose, ELEVATIONS};
pub use world::{
    generate_environment, BBox, Environment, GenConfig, ObjectInstance, Viewpoint, IMAGE_HEIGHT,
    IMAGE_WIDTH,
};

/// Success radius in meters.
pub const SUCCESS_DISTANCE_M: f64 = 3.0;

/// Fine-grained route following (R2R) or goal-plus-object (REVERIE).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    R2r,
    Reverie,
}

impl std::str::FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r2r" => Ok(Self::R2r),
            "reverie" => Ok(Self::Reverie),
            other => Err(crate::Error::Config(format!(
                "unknown task {other:?} (expected r2r or reverie)"
            ))),
        }
    }
}
