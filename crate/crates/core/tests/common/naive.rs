//! Straight-line reference implementation over plain nested vectors.
//!
//! Everything here is written independently of the tape: explicit loops,
//! no shared helpers from the library apart from reading parameter values.

#![allow(dead_code)]

use rvb::tensor::ParamStore;

pub type M = Vec<Vec<f64>>;

pub fn param(store: &ParamStore, name: &str) -> M {
    let t = store.get(
        store
            .id(name)
            .unwrap_or_else(|| panic!("no parameter {name}")),
    );
    if t.shape().len() == 1 {
        return vec![t.data().to_vec()];
    }
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

pub fn vec_param(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(store.id(name).unwrap()).data().to_vec()
}

pub fn matmul(a: &M, b: &M) -> M {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn add_row(a: &M, r: &[f64]) -> M {
    a.iter()
        .map(|x| x.iter().zip(r).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &M, gain: &[f64], bias: &[f64]) -> M {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-12).sqrt();
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) * inv * gain[i] + bias[i])
                .collect()
        })
        .collect()
}

pub fn relu(x: &M) -> M {
    x.iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).collect())
        .collect()
}

pub struct Head {
    pub out: M,
    /// Scaled pre-softmax scores.
    pub scores: M,
    pub weights: M,
}

pub fn attention_head(xq: &M, xkv: &M, wq: &M, wk: &M, wv: &M) -> Head {
    let q = matmul(xq, wq);
    let k = matmul(xkv, wk);
    let v = matmul(xkv, wv);
    let d = wq[0].len() as f64;
    let mut scores = vec![vec![0.0; xkv.len()]; xq.len()];
    for i in 0..xq.len() {
        for j in 0..xkv.len() {
            let mut s = 0.0;
            for c in 0..q[0].len() {
                s += q[i][c] * k[j][c];
            }
            scores[i][j] = s / d.sqrt();
        }
    }
    let weights: M = scores.iter().map(|r| softmax(r)).collect();
    let out = matmul(&weights, &v);
    Head {
        out,
        scores,
        weights,
    }
}

/// Returns the projected output and every head.
pub fn multi_head(
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    xq: &M,
    xkv: &M,
) -> (M, Vec<Head>) {
    let hs: Vec<Head> = (0..heads)
        .map(|k| {
            let p = format!("{prefix}.head.{k}");
            attention_head(
                xq,
                xkv,
                &param(store, &format!("{p}.wq")),
                &param(store, &format!("{p}.wk")),
                &param(store, &format!("{p}.wv")),
            )
        })
        .collect();
    let cat: M = (0..xq.len())
        .map(|i| hs.iter().flat_map(|h| h.out[i].clone()).collect())
        .collect();
    (matmul(&cat, &param(store, &format!("{prefix}.wo"))), hs)
}

pub fn ffn(store: &ParamStore, prefix: &str, x: &M) -> M {
    let inner = relu(&matmul(x, &param(store, &format!("{prefix}.w1"))));
    matmul(&inner, &param(store, &format!("{prefix}.w2")))
}

/// Post-LN encoder layer with queries `xq` over keys `xkv`.
pub fn encoder_layer(
    store: &ParamStore,
    prefix: &str,
    heads: usize,
    xq: &M,
    xkv: &M,
) -> (M, Vec<Head>) {
    let (h, hs) = multi_head(store, &format!("{prefix}.attn"), heads, xq, xkv);
    let h1 = layer_norm(
        &add(&h, xq),
        &vec_param(store, &format!("{prefix}.ln1.gain")),
        &vec_param(store, &format!("{prefix}.ln1.bias")),
    );
    let f = ffn(store, &format!("{prefix}.ffn"), &h1);
    let out = layer_norm(
        &add(&h1, &f),
        &vec_param(store, &format!("{prefix}.ln2.gain")),
        &vec_param(store, &format!("{prefix}.ln2.bias")),
    );
    (out, hs)
}

/// Stack over a full sequence where only rows in `queries` are updated.
pub fn stack(
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    heads: usize,
    seq: &M,
    queries: &[usize],
) -> (M, Vec<Head>) {
    let mut seq = seq.clone();
    let mut last = Vec::new();
    for l in 0..layers {
        let xq: M = queries.iter().map(|&i| seq[i].clone()).collect();
        let (out, hs) = encoder_layer(store, &format!("{prefix}.{l}"), heads, &xq, &seq);
        for (r, &i) in queries.iter().enumerate() {
            seq[i] = out[r].clone();
        }
        last = hs;
    }
    (seq, last)
}

pub fn embed(store: &ParamStore, tokens: &[usize]) -> M {
    let word = param(store, "embed.word");
    let pos = param(store, "embed.position");
    let ty = vec_param(store, "embed.type.language");
    let raw: M = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (0..ty.len())
                .map(|c| word[t][c] + pos[i][c] + ty[c])
                .collect()
        })
        .collect();
    layer_norm(
        &raw,
        &vec_param(store, "embed.ln.gain"),
        &vec_param(store, "embed.ln.bias"),
    )
}

/// `(s_0, X)` for a framed instruction.
pub fn init_episode(
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    heads: usize,
    tokens: &[usize],
) -> (Vec<f64>, M) {
    let e = embed(store, tokens);
    let all: Vec<usize> = (0..tokens.len()).collect();
    let (seq, _) = stack(store, prefix, layers, heads, &e, &all);
    (seq[0].clone(), seq[1..].to_vec())
}

pub fn project_scene(store: &ParamStore, scene: &M) -> M {
    add_row(
        &matmul(scene, &param(store, "input.scene")),
        &vec_param(store, "embed.type.scene"),
    )
}

/// Mean over heads of the state row, then softmax over `cols`.
pub fn state_subset(heads: &[Head], cols: &[usize]) -> Vec<f64> {
    let k = heads.len() as f64;
    let mean: Vec<f64> = cols
        .iter()
        .map(|&c| heads.iter().map(|h| h.scores[0][c]).sum::<f64>() / k)
        .collect();
    softmax(&mean)
}

pub struct NaiveStep {
    pub p_a: Vec<f64>,
    pub s_refined: Vec<f64>,
}

/// One-stream R2R step under the language-frozen policy with matching on.
pub fn one_stream_step(
    store: &ParamStore,
    layers: usize,
    heads: usize,
    s: &[f64],
    x: &M,
    scene_raw: &M,
) -> NaiveStep {
    let v = project_scene(store, scene_raw);
    let mut seq = vec![s.to_vec()];
    seq.extend(x.iter().cloned());
    seq.extend(v.iter().cloned());
    let n_l = x.len();
    let queries: Vec<usize> = std::iter::once(0).chain(1 + n_l..seq.len()).collect();
    let (out, last) = stack(store, "encoder.layer", layers, heads, &seq, &queries);
    let lang_cols: Vec<usize> = (1..=n_l).collect();
    let scene_cols: Vec<usize> = (1 + n_l..seq.len()).collect();
    let a_x = state_subset(&last, &lang_cols);
    let a_v = state_subset(&last, &scene_cols);
    let s_f = refine(store, &out[0], &a_x, x, &a_v, &v);
    NaiveStep {
        p_a: a_v,
        s_refined: s_f,
    }
}

pub fn refine(store: &ParamStore, s_r: &[f64], a_x: &[f64], x: &M, a_v: &[f64], v: &M) -> Vec<f64> {
    let h = s_r.len();
    let mut fx = vec![0.0; h];
    let mut fv = vec![0.0; h];
    for (i, w) in a_x.iter().enumerate() {
        for c in 0..h {
            fx[c] += w * x[i][c];
        }
    }
    for (i, w) in a_v.iter().enumerate() {
        for c in 0..h {
            fv[c] += w * v[i][c];
        }
    }
    let mut cat = s_r.to_vec();
    cat.extend(fx.iter().zip(&fv).map(|(a, b)| a * b));
    matmul(&vec![cat], &param(store, "refine.wr"))[0].clone()
}

/// Two-stream step: vision self-attention, cross layer, second vision stack.
pub fn two_stream_step(
    store: &ParamStore,
    heads: usize,
    s: &[f64],
    x: &M,
    scene_raw: &M,
) -> NaiveStep {
    let v = project_scene(store, scene_raw);
    let all_v: Vec<usize> = (0..v.len()).collect();
    let (v1, _) = stack(store, "vis1.layer", 1, heads, &v, &all_v);
    let mut q = vec![s.to_vec()];
    q.extend(v1.iter().cloned());
    let p = "cross.layer.0";
    let ln = |m: &M, name: &str| {
        layer_norm(
            m,
            &vec_param(store, &format!("{p}.{name}.gain")),
            &vec_param(store, &format!("{p}.{name}.bias")),
        )
    };
    let (c, cross_heads) = multi_head(store, &format!("{p}.cross"), heads, &q, x);
    let h1 = ln(&add(&c, &q), "cross.ln");
    let (sa, _) = multi_head(store, &format!("{p}.self"), heads, &h1, &h1);
    let h2 = ln(&add(&sa, &h1), "self.ln");
    let f = ffn(store, &format!("{p}.ffn"), &h2);
    let q2 = ln(&add(&h2, &f), "ffn.ln");
    let all: Vec<usize> = (0..q2.len()).collect();
    let (out, last) = stack(store, "vis2.layer", 1, heads, &q2, &all);
    let scene_cols: Vec<usize> = (1..q2.len()).collect();
    let a_v = state_subset(&last, &scene_cols);
    let lang_cols: Vec<usize> = (0..x.len()).collect();
    let a_x = state_subset(&cross_heads, &lang_cols);
    let s_f = refine(store, &out[0], &a_x, x, &a_v, &v);
    NaiveStep {
        p_a: a_v,
        s_refined: s_f,
    }
}
