//! Navigation and grounding metrics, the attention-progress statistic and a
//! random-walk baseline.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{seeding::rng_for, Environment, Episode, Suite, Task, SUCCESS_DISTANCE_M};
use crate::error::{Error, Result};
use crate::training::ndtw;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    /// Trajectory length in meters.
    pub tl: f64,
    /// Navigation error: geodesic distance from the stop node to the goal.
    pub ne: f64,
    pub success: bool,
    pub spl: f64,
    pub oracle_success: bool,
    pub rgs: bool,
    pub rgspl: f64,
    pub ndtw: f64,
    pub path: Vec<usize>,
    pub stopped_node: usize,
}

fn reached(env: &Environment, episode: &Episode, task: Task, node: usize) -> bool {
    match task {
        Task::R2r => env.geodesic(node, episode.goal) < SUCCESS_DISTANCE_M,
        Task::Reverie => episode
            .target_object
            .is_some_and(|id| env.node(node).objects.iter().any(|o| o.id == id)),
    }
}

/// Score one trajectory. The last node of `trajectory` is the stop node.
pub fn evaluate_trajectory(
    env: &Environment,
    episode: &Episode,
    task: Task,
    trajectory: &[usize],
    grounded_object: Option<usize>,
) -> Result<EpisodeResult> {
    if trajectory.first() != Some(&episode.start.node) {
        return Err(Error::Contract(format!(
            "trajectory of episode {} does not begin at the start node {}",
            episode.id, episode.start.node
        )));
    }
    let mut tl = 0.0;
    for w in trajectory.windows(2) {
        tl += env.edge_length(w[0], w[1]).ok_or_else(|| {
            Error::Contract(format!(
                "trajectory hop {} -> {} is not an edge",
                w[0], w[1]
            ))
        })?;
    }
    let stop = trajectory[trajectory.len() - 1];
    let ne = env.geodesic(stop, episode.goal);
    let success = reached(env, episode, task, stop);
    let shortest = env.geodesic(episode.start.node, episode.goal);
    let weight = if success {
        shortest / tl.max(shortest)
    } else {
        0.0
    };
    let weight = if weight.is_nan() { 1.0 } else { weight };
    let rgs = task == Task::Reverie
        && success
        && grounded_object.is_some()
        && grounded_object == episode.target_object;
    Ok(EpisodeResult {
        episode: episode.id,
        tl,
        ne,
        success,
        spl: weight,
        oracle_success: trajectory.iter().any(|&n| reached(env, episode, task, n)),
        rgs,
        rgspl: if rgs { weight } else { 0.0 },
        ndtw: ndtw(trajectory, &episode.path, SUCCESS_DISTANCE_M, |a, b| {
            env.geodesic(a, b)
        }),
        path: trajectory.to_vec(),
        stopped_node: stop,
    })
}

/// Suite-level means; rates are percentages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub osr: f64,
    pub rgs: f64,
    pub rgspl: f64,
    pub ndtw: f64,
}

pub const TABLE_COLUMNS: [&str; 8] = ["TL", "NE", "SR", "SPL", "OSR", "RGS", "RGSPL", "nDTW"];

impl Aggregate {
    pub fn values(&self) -> [f64; 8] {
        [
            self.tl, self.ne, self.sr, self.spl, self.osr, self.rgs, self.rgspl, self.ndtw,
        ]
    }

    pub fn csv(&self) -> String {
        let vals: Vec<String> = self.values().iter().map(|v| format!("{v:.4}")).collect();
        format!("{}\n{}\n", TABLE_COLUMNS.join(","), vals.join(","))
    }

    pub fn text_table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (c, v) in TABLE_COLUMNS.iter().zip(self.values()) {
            let _ = write!(head, "{c:>8}");
            let _ = write!(row, "{v:>8.2}");
        }
        format!("{head}\n{row}\n")
    }
}

pub fn aggregate(results: &[EpisodeResult]) -> Aggregate {
    if results.is_empty() {
        return Aggregate::default();
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let pct = |f: &dyn Fn(&EpisodeResult) -> bool| {
        100.0 * results.iter().filter(|r| f(r)).count() as f64 / n
    };
    Aggregate {
        episodes: results.len(),
        tl: mean(&|r| r.tl),
        ne: mean(&|r| r.ne),
        sr: pct(&|r| r.success),
        spl: 100.0 * mean(&|r| r.spl),
        osr: pct(&|r| r.oracle_success),
        rgs: pct(&|r| r.rgs),
        rgspl: 100.0 * mean(&|r| r.rgspl),
        ndtw: 100.0 * mean(&|r| r.ndtw),
    }
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. `None` for fewer than two points; zero when
/// either side has no variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Some(0.0);
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// `Σ_i i · w_i` after normalising `w` to sum to one.
pub fn centroid(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| i as f64 * w)
        .sum::<f64>()
        / total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressStat {
    /// Language-attention centroid of the state token per step.
    pub centroids: Vec<f64>,
    /// Spearman correlation of step index with `centroids`.
    pub rho: Option<f64>,
    /// Centroid of the selected token's language attention per step.
    pub selected_centroids: Vec<f64>,
    pub selected_rho: Option<f64>,
}

/// Attention-progress statistic over one episode's per-step language
/// weights (and optionally the selected token's language weights).
pub fn attention_progress_stat(lang_weights: &[Vec<f64>], selected: &[Vec<f64>]) -> ProgressStat {
    let centroids: Vec<f64> = lang_weights.iter().map(|w| centroid(w)).collect();
    let steps: Vec<f64> = (0..centroids.len()).map(|t| t as f64).collect();
    let sel: Vec<f64> = selected
        .iter()
        .filter(|w| !w.is_empty())
        .map(|w| centroid(w))
        .collect();
    let sel_steps: Vec<f64> = (0..sel.len()).map(|t| t as f64).collect();
    ProgressStat {
        rho: spearman(&steps, &centroids),
        centroids,
        selected_rho: spearman(&sel_steps, &sel),
        selected_centroids: sel,
    }
}

/// Monte-Carlo random walk: at every step pick uniformly among the
/// candidates and stop; a random object is grounded on stop.
pub fn random_walk_baseline(
    suite: &Suite,
    max_steps: usize,
    trials: usize,
    seed: u64,
) -> Result<Aggregate> {
    let mut results = Vec::with_capacity(suite.len() * trials);
    for ep in &suite.episodes {
        let env = suite.env_of(ep);
        for trial in 0..trials {
            let mut rng = rng_for(&[seed, 0xBA5E, ep.id as u64, trial as u64]);
            let mut path = vec![ep.start.node];
            let mut node = ep.start.node;
            for _ in 0..max_steps {
                let nbrs = env.neighbors(node);
                let a = rng.random_range(0..=nbrs.len());
                if a == nbrs.len() {
                    break;
                }
                node = nbrs[a];
                path.push(node);
            }
            let objs = &env.node(node).objects;
            let grounded = (!objs.is_empty()).then(|| objs[rng.random_range(0..objs.len())].id);
            results.push(evaluate_trajectory(env, ep, suite.task, &path, grounded)?);
        }
    }
    Ok(aggregate(&results))
}
