use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head, HeadOutput, HeadParams};
use super::mask::AttentionMask;
use crate::error::{Error, Result};
use crate::tensor::init::xavier_uniform;
use crate::tensor::{FlopCategory, Graph, ParamId, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub ff1: ParamId,
    pub ff2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl EncoderLayerParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        n_heads: usize,
        head_dim: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = n_heads * head_dim;
        let heads = (0..n_heads)
            .map(|k| {
                HeadParams::new(
                    store,
                    &format!("{prefix}.attn.head.{k}"),
                    hidden,
                    head_dim,
                    rng,
                )
            })
            .collect();
        Self {
            heads,
            wo: store.add(
                format!("{prefix}.attn.wo"),
                xavier_uniform(hidden, hidden, rng),
            ),
            ff1: store.add(
                format!("{prefix}.ffn.w1"),
                xavier_uniform(hidden, ffn_dim, rng),
            ),
            ff2: store.add(
                format!("{prefix}.ffn.w2"),
                xavier_uniform(ffn_dim, hidden, rng),
            ),
            ln1_gain: store.add(format!("{prefix}.ln1.gain"), Tensor::ones(&[hidden])),
            ln1_bias: store.add(format!("{prefix}.ln1.bias"), Tensor::zeros(&[hidden])),
            ln2_gain: store.add(format!("{prefix}.ln2.gain"), Tensor::ones(&[hidden])),
            ln2_bias: store.add(format!("{prefix}.ln2.bias"), Tensor::zeros(&[hidden])),
        }
    }
}

/// Inverted dropout with its own rng. A rate of zero is a no-op.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, m)
    }
}

pub struct LayerOutput {
    /// `[n_q, hidden]`, same shape as the query input.
    pub out: Var,
    pub heads: Vec<HeadOutput>,
}

/// One encoder layer:
/// `H' = LN(MHA(X_q, X_kv) + X_q)`, `X = LN(H' + ReLU(H' W1) W2)`.
pub fn encoder_layer(
    g: &mut Graph,
    store: &ParamStore,
    params: &EncoderLayerParams,
    xq: Var,
    xkv: Var,
    mask: Option<&[bool]>,
    mut dropout: Option<&mut Dropout>,
) -> Result<LayerOutput> {
    let (h, heads) = multi_head(g, store, xq, xkv, &params.heads, params.wo, mask)?;
    let h = match dropout.as_deref_mut() {
        Some(d) => d.apply(g, h)?,
        None => h,
    };
    let res1 = g.add(h, xq)?;
    let ln1g = g.param(store, params.ln1_gain);
    let ln1b = g.param(store, params.ln1_bias);
    let h_prime = g.layer_norm(res1, ln1g, ln1b, LN_EPS)?;

    let w1 = g.param(store, params.ff1);
    let w2 = g.param(store, params.ff2);
    let inner = g.matmul(h_prime, w1)?;
    let act = g.relu(inner);
    let ff = g.matmul(act, w2)?;
    let (nq, hidden, ffn) = (g.value(xq).rows(), g.value(w1).rows(), g.value(w1).cols());
    g.count_flops(FlopCategory::FeedForward, (2 * nq * hidden * ffn) as u64);
    let ff = match dropout {
        Some(d) => d.apply(g, ff)?,
        None => ff,
    };

    let res2 = g.add(h_prime, ff)?;
    let ln2g = g.param(store, params.ln2_gain);
    let ln2b = g.param(store, params.ln2_bias);
    let out = g.layer_norm(res2, ln2g, ln2b, LN_EPS)?;
    Ok(LayerOutput { out, heads })
}

pub struct StackOutput {
    /// Full token sequence after the last layer; rows that were never
    /// queries are carried through unchanged.
    pub seq: Var,
    /// Query-side output of the last layer, `[n_q, hidden]`.
    pub queries: Var,
    /// Per-layer head outputs; `layers.last()` is the final layer.
    pub layers: Vec<Vec<HeadOutput>>,
}

/// Run a stack of layers over a full token sequence under `mask`.
///
/// At every layer the keys are the whole current sequence and the queries
/// are the rows listed in `mask.query_index()`; only those rows are updated.
pub fn encode_stack(
    g: &mut Graph,
    store: &ParamStore,
    layers: &[EncoderLayerParams],
    seq: Var,
    mask: &AttentionMask,
    mut dropout: Option<&mut Dropout>,
) -> Result<StackOutput> {
    let n = g.value(seq).rows();
    if n != mask.n_keys() {
        return Err(Error::Shape {
            op: "encode_stack",
            lhs: g.shape(seq).to_vec(),
            rhs: vec![mask.n_keys(), mask.n_queries()],
        });
    }
    let all_queries = mask.query_index().iter().copied().eq(0..n);
    // Row map into concat_rows([layer_out, previous_seq]) that rebuilds the sequence.
    let nq = mask.n_queries();
    let rebuild: Vec<usize> = (0..n)
        .map(|i| mask.query_row_of(i).unwrap_or(nq + i))
        .collect();

    let mut seq = seq;
    let mut queries = seq;
    let mut per_layer = Vec::with_capacity(layers.len());
    for params in layers {
        let xq = if all_queries {
            seq
        } else {
            g.select_rows(seq, mask.query_index())?
        };
        let out = encoder_layer(
            g,
            store,
            params,
            xq,
            seq,
            Some(mask.allowed()),
            dropout.as_deref_mut(),
        )?;
        queries = out.out;
        seq = if all_queries {
            out.out
        } else {
            let both = g.concat_rows(&[out.out, seq])?;
            g.select_rows(both, &rebuild)?
        };
        per_layer.push(out.heads);
    }
    Ok(StackOutput {
        seq,
        queries,
        layers: per_layer,
    })
}
