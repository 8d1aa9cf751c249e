//! Multi-head self-attention encoder with navigation masks.

mod attention;
mod layer;
mod mask;

pub use attention::{attention_head, multi_head, HeadOutput, HeadParams};
pub use layer::{
    encode_stack, encoder_layer, Dropout, EncoderLayerParams, LayerOutput, StackOutput, LN_EPS,
};
pub use mask::{build_nav_mask, nav_roles, AttentionMask, LangAttnPolicy, TokenRole};
