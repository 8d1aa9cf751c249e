use std::f64::consts::{FRAC_PI_4, TAU};

use serde::{Deserialize, Serialize};

use super::world::Environment;
use super::Task;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const STOP_WORD: usize = 3;
pub const N_TURN_WORDS: usize = 8;
const FIRST_TURN: usize = 4;

const TURN_NAMES: [&str; N_TURN_WORDS] = [
    "ahead",
    "slight-left",
    "left",
    "sharp-left",
    "back",
    "sharp-right",
    "right",
    "slight-right",
];

/// Closed word list: specials, turn words, landmark words, object words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub n_landmarks: usize,
    pub n_object_classes: usize,
}

impl Vocab {
    pub fn new(n_landmarks: usize, n_object_classes: usize) -> Self {
        Self {
            n_landmarks,
            n_object_classes,
        }
    }

    pub fn len(&self) -> usize {
        FIRST_TURN + N_TURN_WORDS + self.n_landmarks + self.n_object_classes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Turn word for a heading change: 8 bins of 45° centred on the
    /// cardinal and diagonal directions, counter-clockwise.
    pub fn turn_word(&self, relative_heading: f64) -> usize {
        let bin = (relative_heading.rem_euclid(TAU) / FRAC_PI_4).round() as usize % N_TURN_WORDS;
        FIRST_TURN + bin
    }

    pub fn landmark_word(&self, landmark: usize) -> usize {
        debug_assert!(landmark < self.n_landmarks);
        FIRST_TURN + N_TURN_WORDS + landmark
    }

    pub fn object_word(&self, class: usize) -> usize {
        debug_assert!(class < self.n_object_classes);
        FIRST_TURN + N_TURN_WORDS + self.n_landmarks + class
    }

    pub fn word(&self, id: usize) -> String {
        let lm = FIRST_TURN + N_TURN_WORDS;
        let obj = lm + self.n_landmarks;
        match id {
            PAD => "[PAD]".into(),
            CLS => "[CLS]".into(),
            SEP => "[SEP]".into(),
            STOP_WORD => "stop".into(),
            i if i < lm => TURN_NAMES[i - FIRST_TURN].into(),
            i if i < obj => format!("landmark-{}", i - lm),
            i if i < self.len() => format!("object-{}", i - obj),
            i => format!("[UNK:{i}]"),
        }
    }

    /// Frame word ids as `[CLS] U [SEP]`.
    pub fn frame(&self, words: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(words.len() + 2);
        out.push(CLS);
        out.extend_from_slice(words);
        out.push(SEP);
        out
    }
}

/// Words describing a path (without `[CLS]`/`[SEP]`).
///
/// R2R: one `(turn, landmark)` pair per hop, then the stop word.
/// REVERIE: the goal landmark and the target object's class.
pub fn synthesize_instruction(
    env: &Environment,
    vocab: &Vocab,
    path: &[usize],
    start_heading: f64,
    task: Task,
    target_object: Option<usize>,
) -> Result<Vec<usize>> {
    let (&first, &goal) = match (path.first(), path.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Contract("empty path".into())),
    };
    match task {
        Task::R2r => {
            let mut words = Vec::with_capacity(2 * path.len() - 1);
            let mut heading = start_heading;
            let mut prev = first;
            for &next in &path[1..] {
                let (a, b) = (env.node(prev).position, env.node(next).position);
                let absolute = (b[1] - a[1]).atan2(b[0] - a[0]);
                words.push(vocab.turn_word(absolute - heading));
                words.push(vocab.landmark_word(env.node(next).landmark));
                heading = absolute;
                prev = next;
            }
            words.push(STOP_WORD);
            Ok(words)
        }
        Task::Reverie => {
            let id = target_object.ok_or_else(|| {
                Error::Contract("REVERIE instruction needs a target object".into())
            })?;
            let obj = env
                .node(goal)
                .objects
                .iter()
                .find(|o| o.id == id)
                .ok_or_else(|| {
                    Error::Contract(format!("object {id} is not at the goal viewpoint {goal}"))
                })?;
            Ok(vec![
                vocab.landmark_word(env.node(goal).landmark),
                vocab.object_word(obj.class),
            ])
        }
    }
}
