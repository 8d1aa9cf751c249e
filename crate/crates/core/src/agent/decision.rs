use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};
use crate::transformer::HeadOutput;

/// Floor applied before taking the log of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    #[default]
    Greedy,
    Sample,
}

/// Head-averaged pre-softmax scores of one query row, `[1, n_k]`.
pub fn head_mean_scores(g: &mut Graph, heads: &[HeadOutput], query_row: usize) -> Result<Var> {
    let rows = heads
        .iter()
        .map(|h| g.select_rows(h.scores, &[query_row]))
        .collect::<Result<Vec<_>>>()?;
    mean_of(g, &rows)
}

fn mean_of(g: &mut Graph, rows: &[Var]) -> Result<Var> {
    let (&first, rest) = rows
        .split_first()
        .ok_or_else(|| Error::Contract("no attention heads to average".into()))?;
    let mut acc = first;
    for &r in rest {
        acc = g.add(acc, r)?;
    }
    Ok(g.scale(acc, 1.0 / rows.len() as f64))
}

/// Softmax of `[1, n]` scores restricted to the `subset` columns.
pub fn subset_softmax(g: &mut Graph, scores: Var, subset: &[usize]) -> Result<Var> {
    if subset.is_empty() {
        return Err(Error::Contract("attention subset is empty".into()));
    }
    let picked = g.select_cols(scores, subset)?;
    g.softmax_rows(picked, None)
}

/// Average per-head `[1, n_k]` scores, then softmax over `subset` only.
pub fn mean_head_attention(g: &mut Graph, head_scores: &[Var], subset: &[usize]) -> Result<Var> {
    let mean = mean_of(g, head_scores)?;
    subset_softmax(g, mean, subset)
}

/// Greedy argmax (lowest index on ties) or a categorical draw.
pub fn select_action<R: Rng + ?Sized>(p: &[f64], mode: SelectMode, rng: &mut R) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::Contract("empty action distribution".into()));
    }
    if let Some(i) = p.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "action probability {i} is {}",
            p[i]
        )));
    }
    match mode {
        SelectMode::Greedy => Ok(argmax(p)),
        SelectMode::Sample => {
            let total: f64 = p.iter().sum();
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (i, &x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    return Ok(i);
                }
            }
            Ok(p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1))
        }
    }
}

/// First index of the maximum.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopDecision {
    /// Move towards this scene token.
    Continue(usize),
    /// Stop and ground this object.
    Stop(usize),
}

/// Stop iff some object outscores every scene token (strictly).
pub fn reverie_stop_rule(scene: &[f64], objects: &[f64]) -> Result<StopDecision> {
    if scene.is_empty() || objects.is_empty() {
        return Err(Error::Contract(
            "stop rule needs scene and object tokens".into(),
        ));
    }
    let (s, o) = (argmax(scene), argmax(objects));
    Ok(if objects[o] > scene[s] {
        StopDecision::Stop(o)
    } else {
        StopDecision::Continue(s)
    })
}
