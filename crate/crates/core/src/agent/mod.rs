//! The recurrent navigation agent: state initialisation from `[CLS]`,
//! masked recurrent steps, attention-as-policy decisions, cross-modal
//! matching and the two-stream variant.

mod config;
mod decision;
mod model;
mod rollout;
mod two_stream;

pub use config::{InputDims, ModelConfig, Variant};
pub use decision::{
    argmax, head_mean_scores, mean_head_attention, reverie_stop_rule, select_action,
    subset_softmax, SelectMode, StopDecision, LOG_FLOOR,
};
pub use model::{
    record_decision, refine_state, AgentState, AttentionEntry, Model, StepOutput, VisualInputs,
};
pub use rollout::{rollout, Driver, Rollout, StepRecord, DEFAULT_MAX_STEPS};
pub use two_stream::{cross_layer, CrossLayerOutput, CrossLayerParams};
