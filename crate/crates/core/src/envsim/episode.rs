use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureConfig;
use super::instruction::{synthesize_instruction, Vocab};
use super::pose::AgentPose;
use super::seeding::{mix, rng_for};
use super::world::{generate_environment, Environment, GenConfig};
use super::Task;
use crate::error::{Error, Result};

pub const SUITE_FORMAT: &str = "rvb-suite";
pub const SUITE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    /// Index into [`Suite::environments`].
    pub env: usize,
    pub start: AgentPose,
    pub goal: usize,
    /// Ground-truth shortest path, `start.node ..= goal`.
    pub path: Vec<usize>,
    /// Framed `[CLS] U [SEP]` token ids.
    pub instruction: Vec<usize>,
    pub target_object: Option<usize>,
}

impl Episode {
    pub fn hops(&self) -> usize {
        self.path.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub task: Task,
    pub n_environments: usize,
    pub n_episodes: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    pub env: GenConfig,
    pub features: FeatureConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::R2r,
            n_environments: 10,
            n_episodes: 200,
            min_hops: 2,
            max_hops: 5,
            env: GenConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

/// Environments plus episodes over them, with the feature and vocabulary
/// settings needed to observe them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub task: Task,
    pub vocab: Vocab,
    pub features: FeatureConfig,
    pub environments: Vec<Environment>,
    pub episodes: Vec<Episode>,
}

impl Suite {
    pub fn env_of(&self, episode: &Episode) -> &Environment {
        &self.environments[episode.env]
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn mean_path_length(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .episodes
            .iter()
            .map(|e| self.env_of(e).geodesic(e.start.node, e.goal))
            .sum();
        total / self.episodes.len() as f64
    }

    /// Structural checks: indices in range and every path a shortest path.
    pub fn validate(&self) -> Result<()> {
        if self.format != SUITE_FORMAT {
            return Err(Error::Format(format!(
                "expected format {SUITE_FORMAT:?}, got {:?}",
                self.format
            )));
        }
        if self.version != SUITE_VERSION {
            return Err(Error::Format(format!(
                "unsupported suite version {}",
                self.version
            )));
        }
        for ep in &self.episodes {
            let env = self.environments.get(ep.env).ok_or(Error::Index {
                what: "episode environment",
                index: ep.env,
                len: self.environments.len(),
            })?;
            ep.start.validate(env)?;
            if ep.goal >= env.n_nodes() || ep.instruction.iter().any(|&w| w >= self.vocab.len()) {
                return Err(Error::Format(format!(
                    "episode {} references unknown ids",
                    ep.id
                )));
            }
            if ep.path.first() != Some(&ep.start.node) || ep.path.last() != Some(&ep.goal) {
                return Err(Error::Format(format!(
                    "episode {} path endpoints mismatch",
                    ep.id
                )));
            }
            let walked: f64 = ep
                .path
                .windows(2)
                .map(|w| env.edge_length(w[0], w[1]).unwrap_or(f64::INFINITY))
                .sum();
            if (walked - env.geodesic(ep.start.node, ep.goal)).abs() > 1e-9 {
                return Err(Error::Format(format!(
                    "episode {} path is not a shortest path",
                    ep.id
                )));
            }
            if self.task == Task::Reverie && ep.target_object.is_none() {
                return Err(Error::Format(format!(
                    "episode {} lacks a target object",
                    ep.id
                )));
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let suite: Self = serde_json::from_reader(r)?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_json(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_json(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Generate a suite: `n_environments` graphs, episodes assigned round-robin.
pub fn generate_suite(cfg: &SuiteConfig) -> Result<Suite> {
    if cfg.n_environments == 0 {
        return Err(Error::Config("n_environments must be positive".into()));
    }
    if cfg.min_hops == 0 || cfg.min_hops > cfg.max_hops {
        return Err(Error::Config(format!(
            "hop range {}..={} is empty or includes 0",
            cfg.min_hops, cfg.max_hops
        )));
    }
    let environments = (0..cfg.n_environments)
        .map(|i| generate_environment(mix(cfg.seed, i as u64), &cfg.env))
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::new(cfg.env.n_landmarks, cfg.env.n_object_classes);

    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    for id in 0..cfg.n_episodes {
        let env_idx = id % cfg.n_environments;
        let env = &environments[env_idx];
        let mut rng = rng_for(&[cfg.seed, 0xE915, id as u64]);
        let n = env.n_nodes();
        let mut found = None;
        for _ in 0..10_000 {
            let (s, g) = (rng.random_range(0..n), rng.random_range(0..n));
            let path = env.shortest_path(s, g);
            let hops = path.len() - 1;
            if s == g || hops < cfg.min_hops || hops > cfg.max_hops {
                continue;
            }
            if cfg.task == Task::Reverie && env.node(g).objects.is_empty() {
                continue;
            }
            found = Some(path);
            break;
        }
        let path = found.ok_or_else(|| {
            Error::Config(format!(
                "environment {env_idx} has no start/goal pair {}..={} hops apart",
                cfg.min_hops, cfg.max_hops
            ))
        })?;
        let goal = path[path.len() - 1];
        let start = AgentPose::new(path[0], rng.random_range(0.0..std::f64::consts::TAU));
        let target_object = match cfg.task {
            Task::R2r => None,
            Task::Reverie => {
                let objs = &env.node(goal).objects;
                Some(objs[rng.random_range(0..objs.len())].id)
            }
        };
        let words =
            synthesize_instruction(env, &vocab, &path, start.heading, cfg.task, target_object)?;
        episodes.push(Episode {
            id,
            env: env_idx,
            start,
            goal,
            path,
            instruction: vocab.frame(&words),
            target_object,
        });
    }

    Ok(Suite {
        format: SUITE_FORMAT.into(),
        version: SUITE_VERSION,
        seed: cfg.seed,
        task: cfg.task,
        vocab,
        features: cfg.features.clone(),
        environments,
        episodes,
    })
}
