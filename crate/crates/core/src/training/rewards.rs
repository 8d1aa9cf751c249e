use serde::{Deserialize, Serialize};

use crate::envsim::SUCCESS_DISTANCE_M;

/// Which reward terms are active and how the step sign is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub use_ndtw_reward: bool,
    pub use_stop_penalty: bool,
    /// Reward +1 when `D_t - D_{t-1} > 0` (moving away) instead of when the
    /// agent gets closer.
    pub reward_sign_verbatim: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            use_ndtw_reward: true,
            use_stop_penalty: true,
            reward_sign_verbatim: false,
        }
    }
}

impl RewardConfig {
    /// Distance-only shaping.
    pub fn distance_only() -> Self {
        Self {
            use_ndtw_reward: false,
            use_stop_penalty: false,
            reward_sign_verbatim: false,
        }
    }
}

/// `r^D`: ±1 per move, ±2 on stop depending on `D_t < 3`.
pub fn progress_reward(d_prev: f64, d_cur: f64, is_stop: bool, verbatim: bool) -> f64 {
    if is_stop {
        return if d_cur < SUCCESS_DISTANCE_M {
            2.0
        } else {
            -2.0
        };
    }
    let delta = d_cur - d_prev;
    let positive = if verbatim { delta > 0.0 } else { delta < 0.0 };
    if positive {
        1.0
    } else {
        -1.0
    }
}

/// `(r^P, r^S)`. `r^P` is the nDTW gain per move, `2 P_t` on a successful
/// stop; `r^S = -2 (1 - D_{t-1})` when the agent walks away from within 1 m
/// of the goal.
pub fn fidelity_rewards(
    p_prev: f64,
    p_cur: f64,
    d_prev: f64,
    d_cur: f64,
    is_stop: bool,
) -> (f64, f64) {
    if is_stop {
        let r_p = if d_cur < SUCCESS_DISTANCE_M {
            2.0 * p_cur
        } else {
            0.0
        };
        return (r_p, 0.0);
    }
    let r_s = if d_prev <= 1.0 && d_cur - d_prev > 0.0 {
        -2.0 * (1.0 - d_prev)
    } else {
        0.0
    };
    (p_cur - p_prev, r_s)
}

/// Reward components for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardParts {
    pub r_d: f64,
    pub r_p: f64,
    pub r_s: f64,
}

pub fn reward_parts(
    p_prev: f64,
    p_cur: f64,
    d_prev: f64,
    d_cur: f64,
    is_stop: bool,
    cfg: &RewardConfig,
) -> RewardParts {
    let (r_p, r_s) = fidelity_rewards(p_prev, p_cur, d_prev, d_cur, is_stop);
    RewardParts {
        r_d: progress_reward(d_prev, d_cur, is_stop, cfg.reward_sign_verbatim),
        r_p,
        r_s,
    }
}

/// Sum of the enabled components.
pub fn total_reward(parts: RewardParts, cfg: &RewardConfig) -> f64 {
    let mut r = parts.r_d;
    if cfg.use_ndtw_reward {
        r += parts.r_p;
    }
    if cfg.use_stop_penalty {
        r += parts.r_s;
    }
    r
}

/// Normalised DTW: `exp(-DTW(pred, ref) / (|ref| · threshold))`, with
/// `dist` the cost between two nodes.
pub fn ndtw<F: Fn(usize, usize) -> f64>(
    pred: &[usize],
    reference: &[usize],
    threshold: f64,
    dist: F,
) -> f64 {
    assert!(
        !pred.is_empty() && !reference.is_empty(),
        "nDTW needs non-empty paths"
    );
    (-dtw(pred, reference, &dist) / (reference.len() as f64 * threshold)).exp()
}

/// Dynamic-time-warping cost over a node-distance function.
pub fn dtw<F: Fn(usize, usize) -> f64>(pred: &[usize], reference: &[usize], dist: &F) -> f64 {
    let m = reference.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &p in pred {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = dist(p, reference[j - 1]) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Discounted returns `G_t = Σ_{k≥t} γ^{k-t} r_k`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `A_t = G_t - e_t`.
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    returns.iter().zip(values).map(|(g, e)| g - e).collect()
}
