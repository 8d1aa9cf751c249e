use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::init::xavier_uniform;
use crate::tensor::{FlopCategory, Graph, ParamId, ParamStore, Var};

/// Query/key/value projections of one head (`hidden -> head_dim` each).
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl HeadParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            wq: store.add(
                format!("{prefix}.wq"),
                xavier_uniform(hidden, head_dim, rng),
            ),
            wk: store.add(
                format!("{prefix}.wk"),
                xavier_uniform(hidden, head_dim, rng),
            ),
            wv: store.add(
                format!("{prefix}.wv"),
                xavier_uniform(hidden, head_dim, rng),
            ),
        }
    }
}

/// Output of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `softmax(A) · V`, `[n_q, head_dim]`.
    pub mixed: Var,
    /// Scaled pre-softmax scores `A = Q Kᵀ / sqrt(d_h)`, `[n_q, n_k]`.
    pub scores: Var,
    /// Post-softmax weights, `[n_q, n_k]`.
    pub weights: Var,
}

/// Scaled dot-product attention for one head.
pub fn attention_head(
    g: &mut Graph,
    store: &ParamStore,
    xq: Var,
    xkv: Var,
    head: &HeadParams,
    mask: Option<&[bool]>,
) -> Result<HeadOutput> {
    let hidden = g.value(xq).cols();
    if g.value(xkv).cols() != hidden {
        return Err(Error::Shape {
            op: "attention_head",
            lhs: g.shape(xq).to_vec(),
            rhs: g.shape(xkv).to_vec(),
        });
    }
    let (nq, nk) = (g.value(xq).rows(), g.value(xkv).rows());

    let wq = g.param(store, head.wq);
    let wk = g.param(store, head.wk);
    let wv = g.param(store, head.wv);
    let d_h = g.value(wq).cols();

    let q = g.matmul(xq, wq)?;
    let k = g.matmul(xkv, wk)?;
    let v = g.matmul(xkv, wv)?;
    g.count_flops(
        FlopCategory::Projection,
        ((nq + 2 * nk) * hidden * d_h) as u64,
    );

    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let scores = g.scale(raw, 1.0 / (d_h as f64).sqrt());
    g.count_flops(FlopCategory::AttentionScores, (nq * nk * d_h) as u64);

    let weights = g.softmax_rows(scores, mask)?;
    let mixed = g.matmul(weights, v)?;
    g.count_flops(FlopCategory::ValueMixing, (nq * nk * d_h) as u64);

    Ok(HeadOutput {
        mixed,
        scores,
        weights,
    })
}

/// All heads, concatenated and projected: `[H_1; ...; H_h] · W^O`.
pub fn multi_head(
    g: &mut Graph,
    store: &ParamStore,
    xq: Var,
    xkv: Var,
    heads: &[HeadParams],
    wo: ParamId,
    mask: Option<&[bool]>,
) -> Result<(Var, Vec<HeadOutput>)> {
    if heads.is_empty() {
        return Err(Error::Contract("multi_head needs at least one head".into()));
    }
    let outs = heads
        .iter()
        .map(|h| attention_head(g, store, xq, xkv, h, mask))
        .collect::<Result<Vec<_>>>()?;
    let mixed: Vec<Var> = outs.iter().map(|o| o.mixed).collect();
    let cat = g.concat_cols(&mixed)?;
    let wo = g.param(store, wo);
    let (nq, width) = (g.value(cat).rows(), g.value(cat).cols());
    if g.value(wo).rows() != width {
        return Err(Error::Shape {
            op: "multi_head",
            lhs: g.shape(cat).to_vec(),
            rhs: g.shape(wo).to_vec(),
        });
    }
    let out = g.matmul(cat, wo)?;
    g.count_flops(
        FlopCategory::Projection,
        (nq * width * g.value(wo).cols()) as u64,
    );
    Ok((out, outs))
}
