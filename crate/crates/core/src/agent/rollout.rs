use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decision::{argmax, select_action, SelectMode, LOG_FLOOR};
use super::model::{AttentionEntry, Model};
use crate::envsim::{scene_features, take_action, teacher_action, Action, Episode, Suite};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};
use crate::transformer::Dropout;

/// Step cap for one episode.
pub const DEFAULT_MAX_STEPS: usize = 15;

/// Who picks the executed action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Driver {
    /// The agent, greedily or by sampling.
    Agent(SelectMode),
    /// Teacher forcing along the shortest path.
    Teacher,
}

/// Plain-data record of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub node: usize,
    pub candidates: Vec<usize>,
    pub p_a: Vec<f64>,
    pub p_o: Option<Vec<f64>>,
    pub action: usize,
    pub teacher_action: usize,
    pub stop: bool,
    /// Object id grounded when stopping in REVERIE.
    pub grounded_object: Option<usize>,
    /// Sum of the entries of `s_t`.
    pub s_checksum: f64,
    pub attn_lang: Vec<f64>,
    pub attention: Vec<AttentionEntry>,
    /// Language weights of the selected scene token (empty if it is not one).
    pub selected_lang: Vec<f64>,
}

pub struct Rollout {
    pub episode: usize,
    pub steps: Vec<StepRecord>,
    /// Visited nodes, starting with the start node.
    pub trajectory: Vec<usize>,
    /// Whether the episode ended with an explicit stop.
    pub stopped: bool,
    pub grounded_object: Option<usize>,
    /// `log p(a_t)` of the executed action, `[1, 1]` each.
    pub log_p_action: Vec<Var>,
    /// `log p(a*_t)` of the teacher action.
    pub log_p_teacher: Vec<Var>,
    /// `log p(o*)` where the target object was observable at a stop step.
    pub log_p_object: Vec<Var>,
    /// `s_t` after each decision.
    pub states: Vec<Var>,
    /// `D_0, ..., D_T` in meters.
    pub distances: Vec<f64>,
}

impl Rollout {
    pub fn final_node(&self) -> usize {
        *self
            .trajectory
            .last()
            .expect("trajectory starts at the start node")
    }
}

fn log_prob(g: &mut Graph, p: Var, index: usize) -> Result<Var> {
    let picked = g.select_cols(p, &[index])?;
    Ok(g.ln_floor(picked, LOG_FLOOR))
}

/// Run one episode from its start pose until stop or `max_steps`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    model: &Model,
    g: &mut Graph,
    suite: &Suite,
    episode: &Episode,
    driver: Driver,
    max_steps: usize,
    rng: &mut R,
    mut dropout: Option<&mut Dropout>,
) -> Result<Rollout> {
    let env = suite.env_of(episode);
    let mut state =
        model.init_episode(g, &episode.instruction, episode.id, dropout.as_deref_mut())?;
    let mut pose = episode.start;
    let mut out = Rollout {
        episode: episode.id,
        steps: Vec::new(),
        trajectory: vec![pose.node],
        stopped: false,
        grounded_object: None,
        log_p_action: Vec::new(),
        log_p_teacher: Vec::new(),
        log_p_object: Vec::new(),
        states: Vec::new(),
        distances: vec![env.geodesic(pose.node, episode.goal)],
    };

    for t in 0..max_steps {
        let obs = scene_features(env, &pose, suite.task, &suite.features);
        let step = model.step(g, &state, &obs, dropout.as_deref_mut())?;
        let p_a = g.value(step.p_a).data().to_vec();
        if p_a.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite p_a at step {t} of episode {}",
                episode.id
            )));
        }
        let teacher = match teacher_action(env, &pose, episode.goal)? {
            Action::Stop => obs.stop_index(),
            Action::Move(n) => obs
                .action_for_node(n)
                .ok_or_else(|| Error::Contract(format!("teacher hop {n} is not a candidate")))?,
        };
        let action = match driver {
            Driver::Teacher => teacher,
            Driver::Agent(mode) => select_action(&p_a, mode, rng)?,
        };
        let stop = action == obs.stop_index();

        out.log_p_action.push(log_prob(g, step.p_a, action)?);
        out.log_p_teacher.push(log_prob(g, step.p_a, teacher)?);
        let p_o = step.p_o.map(|v| g.value(v).data().to_vec());
        let mut grounded = None;
        if stop {
            if let Some(p_o_var) = step.p_o {
                let probs = p_o.as_deref().unwrap_or_default();
                grounded = Some(obs.objects[argmax(probs)].object_id);
                if let Some(target) = episode.target_object {
                    if let Some(k) = obs.objects.iter().position(|o| o.object_id == target) {
                        out.log_p_object.push(log_prob(g, p_o_var, k)?);
                    }
                }
            }
        }

        let direction = obs.action_direction(action);
        let next_state = model.commit(g, &state, &step, &direction)?;
        let selected_lang = step
            .scene_lang_weights
            .get(action)
            .cloned()
            .unwrap_or_default();
        out.steps.push(StepRecord {
            t,
            node: pose.node,
            candidates: obs.candidates.iter().map(|c| c.node).collect(),
            p_a,
            p_o,
            action,
            teacher_action: teacher,
            stop,
            grounded_object: grounded,
            s_checksum: g.value(next_state.s).data().iter().sum(),
            attn_lang: g.value(step.attn_lang).data().to_vec(),
            attention: step.attention,
            selected_lang,
        });
        out.states.push(next_state.s);
        state = next_state;

        if stop {
            out.stopped = true;
            out.grounded_object = grounded;
            break;
        }
        let node = obs
            .action_node(action)
            .expect("non-stop action is a candidate");
        pose = take_action(env, &pose, Action::Move(node))?;
        out.trajectory.push(pose.node);
        out.distances.push(env.geodesic(pose.node, episode.goal));
    }
    if out.stopped {
        // Stopping keeps the agent in place.
        out.distances
            .push(*out.distances.last().expect("non-empty"));
    }
    Ok(out)
}
