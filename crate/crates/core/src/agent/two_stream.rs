use rand::Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::tensor::init::xavier_uniform;
use crate::tensor::{FlopCategory, Graph, ParamId, ParamStore, Tensor, Var};
use crate::transformer::{multi_head, Dropout, HeadOutput, HeadParams, LN_EPS};

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, prefix: &str, hidden: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::ones(&[hidden])),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[hidden])),
        }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// Cross-modality layer with the language branch removed: the visual side
/// (state + scene tokens) attends to language, then to itself, then an FFN.
#[derive(Clone, Debug)]
pub struct CrossLayerParams {
    cross_heads: Vec<HeadParams>,
    cross_wo: ParamId,
    cross_ln: Norm,
    self_heads: Vec<HeadParams>,
    self_wo: ParamId,
    self_ln: Norm,
    ff1: ParamId,
    ff2: ParamId,
    ffn_ln: Norm,
}

impl CrossLayerParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let h = cfg.hidden();
        let heads = |store: &mut ParamStore, name: &str, rng: &mut R| -> Vec<HeadParams> {
            (0..cfg.heads)
                .map(|k| {
                    HeadParams::new(
                        store,
                        &format!("{prefix}.{name}.head.{k}"),
                        h,
                        cfg.head_dim,
                        rng,
                    )
                })
                .collect()
        };
        let cross_heads = heads(store, "cross", rng);
        let cross_wo = store.add(format!("{prefix}.cross.wo"), xavier_uniform(h, h, rng));
        let cross_ln = Norm::new(store, &format!("{prefix}.cross.ln"), h);
        let self_heads = heads(store, "self", rng);
        let self_wo = store.add(format!("{prefix}.self.wo"), xavier_uniform(h, h, rng));
        let self_ln = Norm::new(store, &format!("{prefix}.self.ln"), h);
        Self {
            cross_heads,
            cross_wo,
            cross_ln,
            self_heads,
            self_wo,
            self_ln,
            ff1: store.add(
                format!("{prefix}.ffn.w1"),
                xavier_uniform(h, cfg.ffn_dim, rng),
            ),
            ff2: store.add(
                format!("{prefix}.ffn.w2"),
                xavier_uniform(cfg.ffn_dim, h, rng),
            ),
            ffn_ln: Norm::new(store, &format!("{prefix}.ffn.ln"), h),
        }
    }
}

pub struct CrossLayerOutput {
    pub out: Var,
    /// Heads of the visual-to-language attention, `[n_vis, n_lang]` scores.
    pub cross_heads: Vec<HeadOutput>,
    pub self_heads: Vec<HeadOutput>,
}

fn maybe_drop(g: &mut Graph, d: Option<&mut Dropout>, x: Var) -> Result<Var> {
    match d {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

pub fn cross_layer(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrossLayerParams,
    vis: Var,
    lang: Var,
    mut dropout: Option<&mut Dropout>,
) -> Result<CrossLayerOutput> {
    let (c, cross_heads) = multi_head(g, store, vis, lang, &p.cross_heads, p.cross_wo, None)?;
    let c = maybe_drop(g, dropout.as_deref_mut(), c)?;
    let c = g.add(c, vis)?;
    let h1 = p.cross_ln.apply(g, store, c)?;

    let (s, self_heads) = multi_head(g, store, h1, h1, &p.self_heads, p.self_wo, None)?;
    let s = maybe_drop(g, dropout.as_deref_mut(), s)?;
    let s = g.add(s, h1)?;
    let h2 = p.self_ln.apply(g, store, s)?;

    let w1 = g.param(store, p.ff1);
    let w2 = g.param(store, p.ff2);
    let inner = g.matmul(h2, w1)?;
    let act = g.relu(inner);
    let ff = g.matmul(act, w2)?;
    let (nq, hidden, ffn) = (g.value(h2).rows(), g.value(w1).rows(), g.value(w1).cols());
    g.count_flops(FlopCategory::FeedForward, (2 * nq * hidden * ffn) as u64);
    let ff = maybe_drop(g, dropout, ff)?;
    let r = g.add(h2, ff)?;
    let out = p.ffn_ln.apply(g, store, r)?;
    Ok(CrossLayerOutput {
        out,
        cross_heads,
        self_heads,
    })
}
