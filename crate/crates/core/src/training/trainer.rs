use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::critic::critic_value;
use super::loss::{critic_loss, navigation_loss, PolicyTrace, TeacherTrace};
use super::optim::{accumulate, clip_global_norm, AdamW, AdamWConfig};
use super::rewards::{
    advantages, discounted_returns, ndtw, reward_parts, total_reward, RewardConfig,
};
use crate::agent::{rollout, Driver, Model, Rollout, SelectMode, StepRecord};
use crate::envsim::seeding::rng_for;
use crate::envsim::{Episode, Suite, SUCCESS_DISTANCE_M};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_trajectory, Aggregate, EpisodeResult};
use crate::tensor::{Graph, ParamId, Tensor};
use crate::transformer::Dropout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the imitation term.
    pub lambda: f64,
    pub gamma: f64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    /// Share of each batch rolled out by sampling (the rest teacher-forced).
    pub rl_fraction: f64,
    pub iterations: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum_steps: usize,
    pub clip_norm: f64,
    pub use_ndtw_reward: bool,
    pub use_stop_penalty: bool,
    pub reward_sign_verbatim: bool,
    /// Stop the critic loss from reaching the shared encoder.
    pub critic_detach: bool,
    /// How RL rollouts pick actions.
    pub sampling: SelectMode,
    pub max_steps: usize,
    /// Iterations between stats rows.
    pub log_every: usize,
    /// Iterations between greedy evaluations (a multiple of `log_every`).
    pub eval_every: usize,
    /// Iterations between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Evaluate on at most this many episodes per suite; 0 means all.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 0.9,
            optimizer: AdamWConfig::default(),
            batch_size: 16,
            rl_fraction: 0.5,
            iterations: 2000,
            grad_accum_steps: 1,
            clip_norm: 40.0,
            use_ndtw_reward: true,
            use_stop_penalty: true,
            reward_sign_verbatim: false,
            critic_detach: false,
            sampling: SelectMode::Sample,
            max_steps: crate::agent::DEFAULT_MAX_STEPS,
            log_every: 10,
            eval_every: 100,
            checkpoint_every: 0,
            eval_episodes: 0,
        }
    }
}

impl TrainConfig {
    pub fn rewards(&self) -> RewardConfig {
        RewardConfig {
            use_ndtw_reward: self.use_ndtw_reward,
            use_stop_penalty: self.use_stop_penalty,
            reward_sign_verbatim: self.reward_sign_verbatim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lambda < 0.0 {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.rl_fraction) {
            return bad(format!(
                "rl_fraction must be in [0, 1], got {}",
                self.rl_fraction
            ));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 || self.max_steps == 0 {
            return bad("batch_size, grad_accum_steps and max_steps must be positive".into());
        }
        if self.log_every == 0
            || self.eval_every == 0
            || !self.eval_every.is_multiple_of(self.log_every)
        {
            return bad("eval_every must be a positive multiple of log_every".into());
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.optimizer.lr) || !positive(self.clip_norm) {
            return bad("lr and clip_norm must be positive".into());
        }
        Ok(())
    }

    fn n_rl(&self) -> usize {
        (self.rl_fraction * self.batch_size as f64).round() as usize
    }
}

/// Per-step rewards of an agent-driven rollout.
pub fn rollout_rewards(
    suite: &Suite,
    episode: &Episode,
    r: &Rollout,
    cfg: &RewardConfig,
) -> Vec<f64> {
    let env = suite.env_of(episode);
    let fidelity = |len: usize| {
        ndtw(
            &r.trajectory[..len],
            &episode.path,
            SUCCESS_DISTANCE_M,
            |a, b| env.geodesic(a, b),
        )
    };
    r.steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let (d_prev, d_cur) = (r.distances[t], r.distances[t + 1]);
            let p_prev = fidelity(t + 1);
            let p_cur = if s.stop { p_prev } else { fidelity(t + 2) };
            total_reward(reward_parts(p_prev, p_cur, d_prev, d_cur, s.stop, cfg), cfg)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeKind {
    Rl,
    Il,
}

/// Gradients and loss parts of one episode.
pub struct EpisodeOutcome {
    pub kind: EpisodeKind,
    pub grads: Vec<(ParamId, Tensor)>,
    pub loss_rl: f64,
    pub loss_il: f64,
    pub loss_critic: f64,
    pub success: bool,
}

/// Roll out one episode on its own tape and backpropagate its loss.
pub fn episode_gradients(
    model: &Model,
    suite: &Suite,
    episode: &Episode,
    kind: EpisodeKind,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let mut rng = rng_for(&[seed, 0xAC7]);
    let mut dropout =
        (model.cfg.dropout > 0.0).then(|| Dropout::new(model.cfg.dropout, rng_for(&[seed, 0xD80])));
    let mut g = Graph::new();
    let driver = match kind {
        EpisodeKind::Rl => Driver::Agent(cfg.sampling),
        EpisodeKind::Il => Driver::Teacher,
    };
    let r = rollout(
        model,
        &mut g,
        suite,
        episode,
        driver,
        cfg.max_steps,
        &mut rng,
        dropout.as_mut(),
    )?;
    let env = suite.env_of(episode);
    let success =
        evaluate_trajectory(env, episode, suite.task, &r.trajectory, r.grounded_object)?.success;

    let (total, loss_rl, loss_il, loss_critic) = match kind {
        EpisodeKind::Rl => {
            let rewards = rollout_rewards(suite, episode, &r, &cfg.rewards());
            let returns = discounted_returns(&rewards, cfg.gamma);
            let mut values = Vec::with_capacity(r.states.len());
            for &s in &r.states {
                let s = if cfg.critic_detach {
                    g.constant(g.value(s).clone())
                } else {
                    s
                };
                values.push(critic_value(&mut g, &model.store, &model.critic, s)?);
            }
            let e: Vec<f64> = values.iter().map(|&v| g.value(v).item()).collect();
            let adv = advantages(&returns, &e);
            let policy = navigation_loss(
                &mut g,
                &[PolicyTrace {
                    log_probs: &r.log_p_action,
                    advantages: &adv,
                }],
                &[],
                cfg.lambda,
            )?;
            let critic = critic_loss(&mut g, &values, &returns)?;
            let (lp, lc) = (g.value(policy).item(), g.value(critic).item());
            (g.add(policy, critic)?, lp, 0.0, lc)
        }
        EpisodeKind::Il => {
            let il = navigation_loss(
                &mut g,
                &[],
                &[TeacherTrace {
                    log_probs: &r.log_p_teacher,
                    object_log_probs: &r.log_p_object,
                }],
                cfg.lambda,
            )?;
            let li = g.value(il).item();
            (il, 0.0, li, 0.0)
        }
    };
    if !g.value(total).is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss in episode {} (rl {loss_rl}, il {loss_il}, critic {loss_critic})",
            episode.id
        )));
    }
    let grads = g.backward(total)?.params(&g);
    if let Some((id, _)) = grads.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for {} in episode {}",
            model.store.name(*id),
            episode.id
        )));
    }
    Ok(EpisodeOutcome {
        kind,
        grads,
        loss_rl,
        loss_il,
        loss_critic,
        success,
    })
}

/// Losses and batch success of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterStats {
    pub loss_rl: f64,
    pub loss_il: f64,
    pub loss_critic: f64,
    pub rl_episodes: usize,
    pub il_episodes: usize,
    pub rl_successes: usize,
    pub grad_norm: f64,
}

/// One row of the stats stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsRow {
    pub iteration: usize,
    pub loss_rl: f64,
    pub loss_il: f64,
    pub loss_critic: f64,
    pub train_sr: Option<f64>,
    pub val_sr: Option<f64>,
    pub val_spl: Option<f64>,
    pub val_ndtw: Option<f64>,
}

pub const STATS_HEADER: &str =
    "iteration,loss_rl,loss_il,loss_critic,train_SR,val_SR,val_SPL,val_nDTW";

impl StatsRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{}",
            self.iteration,
            self.loss_rl,
            self.loss_il,
            self.loss_critic,
            opt(self.train_sr),
            opt(self.val_sr),
            opt(self.val_spl),
            opt(self.val_ndtw)
        )
    }
}

/// Greedy evaluation of a whole suite (or its first `limit` episodes).
pub fn evaluate_model(
    model: &Model,
    suite: &Suite,
    max_steps: usize,
    limit: usize,
) -> Result<EvalOutput> {
    let n = if limit == 0 {
        suite.len()
    } else {
        limit.min(suite.len())
    };
    let per: Vec<Result<(EpisodeResult, Vec<StepRecord>)>> = suite.episodes[..n]
        .par_iter()
        .map(|ep| {
            let mut g = Graph::inference();
            let mut rng = rng_for(&[ep.id as u64, 0xE7A1]);
            let r = rollout(
                model,
                &mut g,
                suite,
                ep,
                Driver::Agent(SelectMode::Greedy),
                max_steps,
                &mut rng,
                None,
            )?;
            let res = evaluate_trajectory(
                suite.env_of(ep),
                ep,
                suite.task,
                &r.trajectory,
                r.grounded_object,
            )?;
            Ok((res, r.steps))
        })
        .collect();
    let mut results = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for p in per {
        let (res, steps) = p?;
        results.push(res);
        traces.push(steps);
    }
    Ok(EvalOutput {
        aggregate: aggregate(&results),
        results,
        traces,
    })
}

pub struct EvalOutput {
    pub aggregate: Aggregate,
    pub results: Vec<EpisodeResult>,
    pub traces: Vec<Vec<StepRecord>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub best_spl: f64,
    pub best_iteration: usize,
    pub final_train: Aggregate,
    pub final_val: Option<Aggregate>,
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub seed: u64,
    opt: AdamW,
    iteration: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(cfg.optimizer, &model.store);
        Ok(Self {
            model,
            cfg,
            seed,
            opt,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Sample a batch (the first `rl_fraction` RL, the rest IL), compute
    /// every episode's gradients in parallel, reduce them in batch order and
    /// take one optimizer step.
    pub fn train_iteration(&mut self, suite: &Suite) -> Result<IterStats> {
        if suite.is_empty() {
            return Err(Error::Contract("training suite is empty".into()));
        }
        let cfg = &self.cfg;
        let b = cfg.batch_size;
        let n_rl = cfg.n_rl();
        let scale = 1.0 / (b * cfg.grad_accum_steps) as f64;
        let mut grads: Vec<(ParamId, Tensor)> = Vec::new();
        let mut stats = IterStats::default();
        for micro in 0..cfg.grad_accum_steps {
            let mut rng = rng_for(&[self.seed, 0xBA7C, self.iteration as u64, micro as u64]);
            let jobs: Vec<(usize, EpisodeKind, u64)> = (0..b)
                .map(|i| {
                    let ep = rng.random_range(0..suite.len());
                    let kind = if i < n_rl {
                        EpisodeKind::Rl
                    } else {
                        EpisodeKind::Il
                    };
                    (ep, kind, rng.random::<u64>())
                })
                .collect();
            let model = &self.model;
            let outcomes: Vec<Result<EpisodeOutcome>> = jobs
                .par_iter()
                .map(|&(ep, kind, seed)| {
                    episode_gradients(model, suite, &suite.episodes[ep], kind, cfg, seed)
                })
                .collect();
            for o in outcomes {
                let o = o?;
                match o.kind {
                    EpisodeKind::Rl => {
                        stats.rl_episodes += 1;
                        stats.loss_rl += o.loss_rl;
                        stats.loss_critic += o.loss_critic;
                        stats.rl_successes += usize::from(o.success);
                    }
                    EpisodeKind::Il => {
                        stats.il_episodes += 1;
                        stats.loss_il += o.loss_il;
                    }
                }
                accumulate(&mut grads, o.grads, scale);
            }
        }
        if stats.rl_episodes > 0 {
            stats.loss_rl /= stats.rl_episodes as f64;
            stats.loss_critic /= stats.rl_episodes as f64;
        }
        if stats.il_episodes > 0 {
            stats.loss_il /= stats.il_episodes as f64;
        }
        stats.grad_norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        self.opt.step(&mut self.model.store, &grads)?;
        self.iteration += 1;
        Ok(stats)
    }

    /// Train for `cfg.iterations`, writing stats rows to `stats` and
    /// checkpoints under `out_dir`. The best-SPL model (on `val`, or on the
    /// training suite without one) is saved as `best.ckpt`.
    pub fn run<W: Write>(
        &mut self,
        train: &Suite,
        val: Option<&Suite>,
        out_dir: Option<&Path>,
        mut stats: W,
    ) -> Result<TrainSummary> {
        writeln!(stats, "{STATS_HEADER}")?;
        let mut window = (0.0, 0.0, 0.0, 0usize, 0usize, 0usize);
        let mut best = (f64::NEG_INFINITY, 0usize);
        let ckpt = |dir: &Path, name: &str| -> PathBuf { dir.join(name) };
        while self.iteration < self.cfg.iterations {
            let s = self.train_iteration(train)?;
            window.0 += s.loss_rl * s.rl_episodes as f64;
            window.1 += s.loss_il * s.il_episodes as f64;
            window.2 += s.loss_critic * s.rl_episodes as f64;
            window.3 += s.rl_episodes;
            window.4 += s.il_episodes;
            window.5 += s.rl_successes;
            let it = self.iteration;
            if !it.is_multiple_of(self.cfg.log_every) && it != self.cfg.iterations {
                continue;
            }
            let (rl_n, il_n) = (window.3.max(1) as f64, window.4.max(1) as f64);
            let mut row = StatsRow {
                iteration: it,
                loss_rl: window.0 / rl_n,
                loss_il: window.1 / il_n,
                loss_critic: window.2 / rl_n,
                train_sr: (window.3 > 0).then(|| 100.0 * window.5 as f64 / window.3 as f64),
                val_sr: None,
                val_spl: None,
                val_ndtw: None,
            };
            window = (0.0, 0.0, 0.0, 0, 0, 0);
            if it.is_multiple_of(self.cfg.eval_every) || it == self.cfg.iterations {
                let target = val.unwrap_or(train);
                let agg = evaluate_model(
                    &self.model,
                    target,
                    self.cfg.max_steps,
                    self.cfg.eval_episodes,
                )?
                .aggregate;
                row.val_sr = Some(agg.sr);
                row.val_spl = Some(agg.spl);
                row.val_ndtw = Some(agg.ndtw);
                if agg.spl > best.0 {
                    best = (agg.spl, it);
                    if let Some(dir) = out_dir {
                        self.model
                            .save(&ckpt(dir, "best.ckpt"), &format!("iteration {it}"))?;
                    }
                }
            }
            writeln!(stats, "{}", row.csv())?;
            stats.flush()?;
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && it.is_multiple_of(self.cfg.checkpoint_every) {
                    self.model.save(
                        &ckpt(dir, &format!("iter_{it:06}.ckpt")),
                        &format!("iteration {it}"),
                    )?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.model.save(
                &ckpt(dir, "final.ckpt"),
                &format!("iteration {}", self.iteration),
            )?;
        }
        let final_train = evaluate_model(
            &self.model,
            train,
            self.cfg.max_steps,
            self.cfg.eval_episodes,
        )?
        .aggregate;
        let final_val = match val {
            Some(v) => Some(
                evaluate_model(&self.model, v, self.cfg.max_steps, self.cfg.eval_episodes)?
                    .aggregate,
            ),
            None => None,
        };
        Ok(TrainSummary {
            iterations: self.iteration,
            best_spl: best.0,
            best_iteration: best.1,
            final_train,
            final_val,
        })
    }
}
