use rand::Rng;

use crate::error::Result;
use crate::tensor::init::xavier_uniform;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Value head `e_t = ReLU(s_t W^{E1}) W^{E2}`.
#[derive(Clone, Debug)]
pub struct CriticParams {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl CriticParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), xavier_uniform(hidden, hidden, rng)),
            w2: store.add(format!("{prefix}.w2"), xavier_uniform(hidden, 1, rng)),
        }
    }
}

/// Scalar value estimate `[1, 1]` for a `[1, hidden]` state.
pub fn critic_value(
    g: &mut Graph,
    store: &ParamStore,
    critic: &CriticParams,
    s: Var,
) -> Result<Var> {
    let w1 = g.param(store, critic.w1);
    let w2 = g.param(store, critic.w2);
    let h = g.matmul(s, w1)?;
    let h = g.relu(h);
    g.matmul(h, w2)
}
