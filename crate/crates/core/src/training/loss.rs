use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Sampled-action log-probs of one RL episode with their advantages.
pub struct PolicyTrace<'a> {
    pub log_probs: &'a [Var],
    pub advantages: &'a [f64],
}

/// Teacher-action (and target-object) log-probs of one IL episode.
pub struct TeacherTrace<'a> {
    pub log_probs: &'a [Var],
    pub object_log_probs: &'a [Var],
}

/// `Σ_i w_i x_i` over scalar vars, as a `[1]` tensor; `None` when empty.
pub fn weighted_sum(g: &mut Graph, vars: &[Var], weights: &[f64]) -> Result<Option<Var>> {
    assert_eq!(vars.len(), weights.len());
    if vars.is_empty() {
        return Ok(None);
    }
    let row = g.concat_cols(vars)?;
    let w = g.constant(Tensor::row(weights.to_vec()));
    let prod = g.mul(row, w)?;
    Ok(Some(g.sum(prod)))
}

fn add_opt(g: &mut Graph, acc: Option<Var>, x: Option<Var>) -> Result<Option<Var>> {
    Ok(match (acc, x) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (a, b) => a.or(b),
    })
}

/// Policy part of the objective:
/// `-Σ log p(a^s_t) A_t - λ Σ log p(a*_t) - Σ log p(o*_t)`.
///
/// Advantages enter as constants. Returns a zero scalar when there is
/// nothing to sum.
pub fn navigation_loss(
    g: &mut Graph,
    rl: &[PolicyTrace],
    il: &[TeacherTrace],
    lambda: f64,
) -> Result<Var> {
    let mut total = None;
    for tr in rl {
        let w: Vec<f64> = tr.advantages.iter().map(|a| -a).collect();
        let term = weighted_sum(g, tr.log_probs, &w)?;
        total = add_opt(g, total, term)?;
    }
    for tr in il {
        let term = weighted_sum(g, tr.log_probs, &vec![-lambda; tr.log_probs.len()])?;
        total = add_opt(g, total, term)?;
        let term = weighted_sum(
            g,
            tr.object_log_probs,
            &vec![-1.0; tr.object_log_probs.len()],
        )?;
        total = add_opt(g, total, term)?;
    }
    Ok(match total {
        Some(v) => v,
        None => g.constant(Tensor::scalar(0.0)),
    })
}

/// `0.5 Σ_t (e_t - G_t)²` over `[1, 1]` value vars.
pub fn critic_loss(g: &mut Graph, values: &[Var], returns: &[f64]) -> Result<Var> {
    assert_eq!(values.len(), returns.len());
    if values.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let e = g.concat_cols(values)?;
    let target = g.constant(Tensor::row(returns.iter().map(|r| -r).collect()));
    let diff = g.add(e, target)?;
    let sq = g.mul(diff, diff)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 0.5))
}
