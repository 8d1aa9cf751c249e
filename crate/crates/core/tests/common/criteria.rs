//! Checks shared by the acceptance runner and the per-module test targets.
//! Each returns an [`Outcome`] instead of panicking so the runner can report
//! every criterion.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rvb::agent::{
    mean_head_attention, select_action, InputDims, Model, ModelConfig, SelectMode, Variant,
};
use rvb::envsim::{
    directional_encoding, generate_suite, scene_features, take_action, Action, Candidate,
    FeatureConfig, ObjectToken, Observation, Suite, SuiteConfig, Task, SUCCESS_DISTANCE_M,
};
use rvb::metrics::{attention_progress_stat, evaluate_trajectory, random_walk_baseline};
use rvb::tensor::gradcheck::{check, rel_err, DEFAULT_STEP};
use rvb::tensor::{Graph, ParamStore, Tensor, Var};
use rvb::training::{
    dtw, evaluate_model, fidelity_rewards, ndtw, progress_reward, reward_parts, total_reward,
    RewardConfig, TrainConfig, Trainer,
};
use rvb::transformer::{build_nav_mask, encode_stack, EncoderLayerParams, LangAttnPolicy};

use super::{naive, random_tensor, rng};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

// ---------------------------------------------------------------- autodiff

pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSED_TOLERANCE: f64 = 1e-3;

/// Random tensor whose entries stay at least `margin` away from zero, so
/// finite differences never straddle a kink.
fn away_from_zero(shape: &[usize], margin: f64, r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = r.random_range(margin..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ out ⊙ W` with a fixed random `W`, so every output entry matters.
fn readout(g: &mut Graph, out: Var, seed: u64) -> rvb::Result<Var> {
    let w = random_tensor(g.shape(out), &mut rng(seed ^ 0xFEED));
    let w = g.constant(w);
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> rvb::Result<Var>>;

/// One seeded case per entry: (op name, inputs, scalar builder).
fn op_cases(case: u64) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut r = rng(1000 + case);
    let m = r.random_range(1..5);
    let k = r.random_range(1..5);
    let n = r.random_range(1..5);
    let seed = case;
    let mut cases: Vec<(&'static str, Vec<Tensor>, Build)> = Vec::new();
    cases.push((
        "matmul",
        vec![
            random_tensor(&[m, k], &mut r),
            random_tensor(&[k, n], &mut r),
        ],
        Box::new(move |g, v| {
            let o = g.matmul(v[0], v[1])?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "transpose",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.transpose(v[0])?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "add",
        vec![
            random_tensor(&[m, n], &mut r),
            random_tensor(&[m, n], &mut r),
        ],
        Box::new(move |g, v| {
            let o = g.add(v[0], v[1])?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "add_row",
        vec![random_tensor(&[m, n], &mut r), random_tensor(&[n], &mut r)],
        Box::new(move |g, v| {
            let o = g.add_row(v[0], v[1])?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "mul",
        vec![
            random_tensor(&[m, n], &mut r),
            random_tensor(&[m, n], &mut r),
        ],
        Box::new(move |g, v| {
            let o = g.mul(v[0], v[1])?;
            readout(g, o, seed)
        }),
    ));
    let factor: f64 = r.random_range(-3.0..3.0);
    cases.push((
        "scale",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.scale(v[0], factor);
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "relu",
        vec![away_from_zero(&[m, n], 1e-2, &mut r)],
        Box::new(move |g, v| {
            let o = g.relu(v[0]);
            readout(g, o, seed)
        }),
    ));
    let width = n + 1;
    let mut mask: Vec<bool> = (0..m * width).map(|_| r.random_bool(0.7)).collect();
    for row in 0..m {
        mask[row * width] = true;
    }
    cases.push((
        "softmax_rows",
        vec![random_tensor(&[m, width], &mut r)],
        Box::new(move |g, v| {
            let o = g.softmax_rows(v[0], Some(&mask))?;
            readout(g, o, seed)
        }),
    ));
    let cols = k + 1;
    cases.push((
        "layer_norm",
        vec![
            random_tensor(&[m, cols], &mut r),
            random_tensor(&[cols], &mut r),
            random_tensor(&[cols], &mut r),
        ],
        Box::new(move |g, v| {
            let o = g.layer_norm(v[0], v[1], v[2], 1e-12)?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "concat_cols",
        vec![
            random_tensor(&[m, k], &mut r),
            random_tensor(&[m, n], &mut r),
        ],
        Box::new(move |g, v| {
            let o = g.concat_cols(&[v[0], v[1]])?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "concat_rows",
        vec![
            random_tensor(&[m, n], &mut r),
            random_tensor(&[k, n], &mut r),
        ],
        Box::new(move |g, v| {
            let o = g.concat_rows(&[v[0], v[1]])?;
            readout(g, o, seed)
        }),
    ));
    let start = r.random_range(0..m);
    let len = r.random_range(1..=m - start);
    cases.push((
        "slice_rows",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.slice_rows(v[0], start, len)?;
            readout(g, o, seed)
        }),
    ));
    let pick: Vec<usize> = (0..n + 1).map(|_| r.random_range(0..n)).collect();
    cases.push((
        "select_cols",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.select_cols(v[0], &pick)?;
            readout(g, o, seed)
        }),
    ));
    let pick: Vec<usize> = (0..m + 1).map(|_| r.random_range(0..m)).collect();
    cases.push((
        "select_rows",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.select_rows(v[0], &pick)?;
            readout(g, o, seed)
        }),
    ));
    let ids: Vec<usize> = (0..k + 1).map(|_| r.random_range(0..m)).collect();
    cases.push((
        "embedding",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.embedding(v[0], &ids)?;
            readout(g, o, seed)
        }),
    ));
    cases.push((
        "sum",
        vec![random_tensor(&[m, n], &mut r)],
        Box::new(move |g, v| {
            let o = g.sum(v[0]);
            let sq = g.mul(o, o)?;
            Ok(g.sum(sq))
        }),
    ));
    let positive = random_tensor(&[m, n], &mut r).map(|x| 0.1 + x.abs());
    cases.push((
        "ln_floor",
        vec![positive],
        Box::new(move |g, v| {
            let o = g.ln_floor(v[0], 1e-12);
            readout(g, o, seed)
        }),
    ));
    cases
}

/// Central differences over chosen entries of stored parameters.
pub fn param_gradcheck<F>(
    store: &ParamStore,
    entries_per_param: usize,
    seed: u64,
    build: F,
) -> rvb::Result<(f64, usize)>
where
    F: Fn(&mut Graph, &ParamStore) -> rvb::Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?.params(&g);
    let mut r = rng(seed);
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (id, analytic) in grads {
        for _ in 0..entries_per_param {
            let j = r.random_range(0..analytic.numel());
            let orig = store.get(id).data()[j];
            let eval = |p: &ParamStore| -> rvb::Result<f64> {
                let mut g = Graph::new();
                let out = build(&mut g, p)?;
                Ok(g.value(out).item())
            };
            probe.get_mut(id).data_mut()[j] = orig + DEFAULT_STEP;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - DEFAULT_STEP;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(rel_err(
                analytic.data()[j],
                (plus - minus) / (2.0 * DEFAULT_STEP),
            ));
            checked += 1;
        }
    }
    Ok((worst, checked))
}

/// A 2-layer encoder under a navigation mask, checked against both its input
/// sequence and its parameters.
pub fn encoder_gradcheck(seed: u64) -> rvb::Result<f64> {
    let mut r = rng(seed);
    let heads = r.random_range(1..4);
    let head_dim = r.random_range(2..4);
    let hidden = heads * head_dim;
    let mut store = ParamStore::new();
    let layers: Vec<EncoderLayerParams> = (0..2)
        .map(|l| {
            EncoderLayerParams::new(&mut store, &format!("enc.{l}"), heads, head_dim, 6, &mut r)
        })
        .collect();
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("ln") {
            let t = random_tensor(store.get(id).shape(), &mut r).map(|x| 1.0 + 0.3 * x);
            *store.get_mut(id) = t;
        }
    }
    let (nl, ns) = (r.random_range(1..4), r.random_range(1..4));
    let policy = if r.random_bool(0.5) {
        LangAttnPolicy::InitOnly
    } else {
        LangAttnPolicy::EmbAttn
    };
    let mask = build_nav_mask(nl, ns, 0, policy)?;
    let seq = random_tensor(&[1 + nl + ns, hidden], &mut r);
    let build_seq = |g: &mut Graph, v: &[Var]| -> rvb::Result<Var> {
        let out = encode_stack(g, &store, &layers, v[0], &mask, None)?;
        readout(g, out.seq, seed)
    };
    let input_err = check(std::slice::from_ref(&seq), DEFAULT_STEP, build_seq)?.max_rel_err;
    let (param_err, _) = param_gradcheck(&store, 3, seed, |g, p| {
        let x = g.constant(seq.clone());
        let out = encode_stack(g, p, &layers, x, &mask, None)?;
        readout(g, out.seq, seed)
    })?;
    Ok(input_err.max(param_err))
}

pub fn autodiff_suite() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut worst_op = (0.0f64, "");
    let mut failures = Vec::new();
    for case in 0..8 {
        for (name, inputs, build) in op_cases(case) {
            match check(&inputs, DEFAULT_STEP, |g, v| build(g, v)) {
                Ok(rep) => {
                    if rep.max_rel_err > worst_op.0 {
                        worst_op = (rep.max_rel_err, name);
                    }
                    if rep.max_rel_err > OP_TOLERANCE {
                        failures.push(format!("{name}#{case} {:.2e}", rep.max_rel_err));
                    }
                }
                Err(e) => failures.push(format!("{name}#{case} error {e}")),
            }
            cases += 1;
        }
    }
    let mut worst_enc = 0.0f64;
    for seed in 0..6 {
        match encoder_gradcheck(seed) {
            Ok(e) => {
                worst_enc = worst_enc.max(e);
                if e > COMPOSED_TOLERANCE {
                    failures.push(format!("encoder#{seed} {e:.2e}"));
                }
            }
            Err(e) => failures.push(format!("encoder#{seed} error {e}")),
        }
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && cases >= 100 && secs < 120.0;
    Outcome::new(
        pass,
        format!(
            "{cases} cases, worst op rel err {:.2e} ({}), worst 2-layer encoder {:.2e}, {secs:.1}s{}",
            worst_op.0,
            worst_op.1,
            worst_enc,
            if failures.is_empty() {
                String::new()
            } else {
                format!(", failures: {}", failures.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------- attention

pub fn toy_suite(task: Task, seed: u64) -> Suite {
    generate_suite(&SuiteConfig {
        seed,
        task,
        n_environments: 3,
        n_episodes: 40,
        ..SuiteConfig::default()
    })
    .unwrap()
}

fn synthetic_observation(
    task: Task,
    n_cand: usize,
    n_obj: usize,
    fc: &FeatureConfig,
    r: &mut ChaCha8Rng,
) -> Observation {
    let candidates = (0..n_cand)
        .map(|i| {
            let heading = r.random_range(0.0..std::f64::consts::TAU);
            let direction = directional_encoding(heading, 0.0, fc.rep_factor);
            let mut feature: Vec<f64> = (0..fc.feat_dim)
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            feature.extend_from_slice(&direction);
            Candidate {
                node: i,
                heading,
                elevation: 0.0,
                direction,
                feature,
            }
        })
        .collect();
    let objects = (0..n_obj)
        .map(|i| ObjectToken {
            object_id: i,
            class: i % 4,
            feature: (0..fc.feat_dim)
                .map(|_| r.random_range(-1.0..1.0))
                .collect(),
            position: [r.random(), r.random(), r.random(), r.random(), r.random()],
            direction: directional_encoding(r.random_range(0.0..6.0), 0.0, fc.rep_factor),
        })
        .collect();
    Observation::new(task, candidates, objects, fc)
}

/// Softmax rows sum to one and masked keys carry exactly zero weight, on
/// random masks through a multi-layer stack.
pub fn masked_stack_contracts(cases: u64) -> Result<(), String> {
    for case in 0..cases {
        let mut r = rng(5000 + case);
        let (heads, head_dim) = (r.random_range(1..4), r.random_range(2..5));
        let mut store = ParamStore::new();
        let layers: Vec<EncoderLayerParams> = (0..r.random_range(1..4))
            .map(|l| {
                EncoderLayerParams::new(&mut store, &format!("l{l}"), heads, head_dim, 8, &mut r)
            })
            .collect();
        let nk = r.random_range(2..10);
        let mut query_index: Vec<usize> = (0..nk).filter(|_| r.random_bool(0.6)).collect();
        if query_index.is_empty() {
            query_index.push(0);
        }
        let mut allowed: Vec<bool> = (0..query_index.len() * nk)
            .map(|_| r.random_bool(0.6))
            .collect();
        for q in 0..query_index.len() {
            allowed[q * nk + r.random_range(0..nk)] = true;
        }
        let roles = vec![rvb::transformer::TokenRole::Scene; nk];
        let mask = rvb::transformer::AttentionMask::new(roles, query_index, allowed.clone())
            .map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let seq = g.constant(random_tensor(&[nk, heads * head_dim], &mut r).map(|x| 4.0 * x));
        let out =
            encode_stack(&mut g, &store, &layers, seq, &mask, None).map_err(|e| e.to_string())?;
        for heads_out in &out.layers {
            for h in heads_out {
                let w = g.value(h.weights);
                for q in 0..w.rows() {
                    let row = w.row_slice(q);
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > 1e-6 {
                        return Err(format!("case {case}: row {q} sums to {total}"));
                    }
                    for (k, &x) in row.iter().enumerate() {
                        if !allowed[q * nk + k] && x != 0.0 {
                            return Err(format!("case {case}: masked ({q},{k}) has weight {x}"));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Model-level distributions of random steps sum to one.
pub fn step_distributions_normalised(cases: u64) -> Result<(), String> {
    let fc = FeatureConfig::default();
    for case in 0..cases {
        let mut r = rng(6000 + case);
        let task = if case % 2 == 0 {
            Task::R2r
        } else {
            Task::Reverie
        };
        let policy = LangAttnPolicy::ALL[(case as usize / 2) % 4];
        let cfg = ModelConfig {
            task,
            lang_attn_policy: policy,
            ..ModelConfig::default()
        };
        let dims = InputDims {
            vocab: 40,
            scene_dim: fc.scene_dim(),
            object_feat_dim: fc.feat_dim,
            dir_dim: fc.dir_dim(),
        };
        let m = Model::new(cfg, dims, case).map_err(|e| e.to_string())?;
        let n_obj = if task == Task::Reverie {
            r.random_range(1..5)
        } else {
            0
        };
        let obs = synthetic_observation(task, r.random_range(1..6), n_obj, &fc, &mut r);
        let mut tokens = vec![1];
        tokens.extend((0..r.random_range(1..12)).map(|_| r.random_range(3..40)));
        tokens.push(2);
        let mut g = Graph::new();
        let st = m
            .init_episode(&mut g, &tokens, 0, None)
            .map_err(|e| e.to_string())?;
        let out = m.step(&mut g, &st, &obs, None).map_err(|e| e.to_string())?;
        let mut dists = vec![out.p_a, out.attn_lang, out.attn_vis];
        dists.extend(out.p_o);
        for d in dists {
            let total: f64 = g.value(d).data().iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(format!("case {case}: distribution sums to {total}"));
            }
        }
    }
    Ok(())
}

/// Under InitOnly, the language tokens fed to every step are bit-identical
/// to those produced at initialisation.
pub fn language_freeze(episodes: usize) -> Result<usize, String> {
    let suite = toy_suite(Task::R2r, 11);
    let m = Model::new(ModelConfig::default(), InputDims::from_suite(&suite), 5)
        .map_err(|e| e.to_string())?;
    let mut r = rng(77);
    let mut steps = 0;
    for e in 0..episodes {
        let ep = &suite.episodes[e % suite.len()];
        let env = suite.env_of(ep);
        let mut g = Graph::new();
        let mut state = m
            .init_episode(&mut g, &ep.instruction, ep.id, None)
            .map_err(|e| e.to_string())?;
        let frozen = g.value(state.x).clone();
        let mut pose = ep.start;
        for _ in 0..8 {
            let obs = scene_features(env, &pose, Task::R2r, &suite.features);
            let out = m
                .step(&mut g, &state, &obs, None)
                .map_err(|e| e.to_string())?;
            let lang = g.value(out.lang_in);
            if lang.shape() != frozen.shape()
                || lang
                    .data()
                    .iter()
                    .zip(frozen.data())
                    .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Err(format!(
                    "episode {e}: language features changed at step {}",
                    state.t
                ));
            }
            steps += 1;
            let a = select_action(out.p_a_values(&g), SelectMode::Sample, &mut r)
                .map_err(|e| e.to_string())?;
            if a == obs.stop_index() {
                break;
            }
            let next = m
                .commit(&mut g, &state, &out, &obs.action_direction(a))
                .map_err(|e| e.to_string())?;
            pose = take_action(env, &pose, Action::Move(obs.action_node(a).unwrap()))
                .map_err(|e| e.to_string())?;
            state = next;
        }
    }
    Ok(steps)
}

pub fn attention_contracts() -> Outcome {
    let mut problems = Vec::new();
    if let Err(e) = masked_stack_contracts(200) {
        problems.push(e);
    }
    if let Err(e) = step_distributions_normalised(40) {
        problems.push(e);
    }
    let steps = match language_freeze(100) {
        Ok(s) => s,
        Err(e) => {
            problems.push(e);
            0
        }
    };
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("200 masked stacks, 40 model steps normalised; language frozen over 100 episodes ({steps} steps)")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- mask economy

/// Attention-score MACs of one navigation step.
pub fn step_score_macs(
    policy: LangAttnPolicy,
    n_lang: usize,
    n_scene_cands: usize,
    n_obj: usize,
    layers: usize,
    heads: usize,
    seed: u64,
) -> rvb::Result<u64> {
    let fc = FeatureConfig::default();
    let task = if n_obj > 0 { Task::Reverie } else { Task::R2r };
    let cfg = ModelConfig {
        task,
        layers,
        heads,
        lang_attn_policy: policy,
        ..ModelConfig::default()
    };
    let dims = InputDims {
        vocab: 40,
        scene_dim: fc.scene_dim(),
        object_feat_dim: fc.feat_dim,
        dir_dim: fc.dir_dim(),
    };
    let m = Model::new(cfg, dims, seed)?;
    let mut r = rng(seed);
    let obs = synthetic_observation(task, n_scene_cands, n_obj, &fc, &mut r);
    let mut tokens = vec![1];
    tokens.extend((0..n_lang - 1).map(|_| r.random_range(3..40)));
    tokens.push(2);
    let mut g = Graph::new();
    let st = m.init_episode(&mut g, &tokens, 0, None)?;
    let before = g.flops().attention_scores;
    m.step(&mut g, &st, &obs, None)?;
    Ok(g.flops().attention_scores - before)
}

pub fn mask_economy() -> Outcome {
    let mut r = rng(4242);
    let mut worst = String::new();
    for case in 0..20 {
        let n_lang = r.random_range(2..20);
        let n_cand = r.random_range(1..8);
        let n_obj = if case % 2 == 0 {
            0
        } else {
            r.random_range(1..6)
        };
        let layers = r.random_range(1..4);
        let heads = r.random_range(1..5);
        let n_scene = if n_obj > 0 { n_cand } else { n_cand + 1 };
        let a = step_score_macs(
            LangAttnPolicy::InitOnly,
            n_lang,
            n_cand,
            n_obj,
            layers,
            heads,
            case,
        );
        let b = step_score_macs(
            LangAttnPolicy::EmbAttn,
            n_lang,
            n_cand,
            n_obj,
            layers,
            heads,
            case,
        );
        let (a, b) = match (a, b) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("case {case}: {e}")),
        };
        let num = (1 + n_scene + n_obj) as u64;
        let den = (1 + n_lang + n_scene + n_obj) as u64;
        if a * den != b * num {
            return Outcome::new(
                false,
                format!("case {case}: measured {a}/{b}, expected {num}/{den} (lang {n_lang}, scene {n_scene}, obj {n_obj})"),
            );
        }
        if case == 0 {
            worst = format!("e.g. {a}/{b} = {num}/{den}");
        }
    }
    Outcome::new(true, format!("20 shape configurations exact; {worst}"))
}

// ---------------------------------------------------------------- decision head

pub fn decision_head_equivalence() -> Outcome {
    let mut r = rng(31337);
    let mut worst = 0.0f64;
    let mut scale_failures = 0;
    for _ in 0..1000 {
        let k = r.random_range(1..9);
        let n = r.random_range(2..21);
        let mut subset: Vec<usize> = (0..n).filter(|_| r.random_bool(0.6)).collect();
        if subset.is_empty() {
            subset.push(r.random_range(0..n));
        }
        subset.shuffle(&mut r);
        let spread: f64 = r.random_range(0.1..20.0);
        let heads: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| r.random_range(-spread..spread)).collect())
            .collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = heads
            .iter()
            .map(|h| g.constant(Tensor::row(h.clone())))
            .collect();
        let p = match mean_head_attention(&mut g, &vars, &subset) {
            Ok(p) => g.value(p).data().to_vec(),
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let mean: Vec<f64> = subset
            .iter()
            .map(|&c| heads.iter().map(|h| h[c]).sum::<f64>() / k as f64)
            .collect();
        worst = worst.max(super::max_abs_diff(&p, &naive::softmax(&mean)));

        let c: f64 = r.random_range(1e-3..1e3);
        let scaled: Vec<Var> = heads
            .iter()
            .map(|h| g.constant(Tensor::row(h.iter().map(|x| x * c).collect())))
            .collect();
        let q = mean_head_attention(&mut g, &scaled, &subset).unwrap();
        let a = select_action(&p, SelectMode::Greedy, &mut r).unwrap();
        let b = select_action(g.value(q).data(), SelectMode::Greedy, &mut r).unwrap();
        let unique_max = mean.iter().filter(|&&x| x == mean[a]).count() == 1;
        if unique_max && a != b {
            scale_failures += 1;
        }
    }
    Outcome::new(
        worst <= 1e-12 && scale_failures == 0,
        format!("1000 tensors, max |Δp| {worst:.2e}; argmax changed under scaling {scale_failures} times"),
    )
}

// ---------------------------------------------------------------- rewards

pub fn reward_constants() -> Result<usize, String> {
    let mut n = 0;
    let mut expect = |cond: bool, what: &str| -> Result<(), String> {
        n += 1;
        if cond {
            Ok(())
        } else {
            Err(what.to_string())
        }
    };
    expect(
        progress_reward(5.0, 4.0, false, false) == 1.0,
        "closer move gives +1",
    )?;
    expect(
        progress_reward(4.0, 5.0, false, false) == -1.0,
        "farther move gives -1",
    )?;
    expect(
        progress_reward(4.0, 4.0, false, false) == -1.0,
        "no progress gives -1",
    )?;
    expect(
        progress_reward(4.0, 5.0, false, true) == 1.0,
        "verbatim sign flips the step reward",
    )?;
    expect(
        progress_reward(5.0, 4.0, false, true) == -1.0,
        "verbatim sign flips the step reward",
    )?;
    expect(
        progress_reward(9.0, 2.999, true, false) == 2.0,
        "stop inside 3 m gives +2",
    )?;
    expect(
        progress_reward(9.0, SUCCESS_DISTANCE_M, true, false) == -2.0,
        "stop at exactly 3 m gives -2",
    )?;
    expect(
        progress_reward(1.0, 3.5, true, false) == -2.0,
        "stop outside gives -2",
    )?;
    let (rp, rs) = fidelity_rewards(0.4, 0.65, 6.0, 4.0, false);
    expect(
        rp == 0.65 - 0.4 && rs == 0.0,
        "r^P is the nDTW gain on moves",
    )?;
    let (rp, rs) = fidelity_rewards(0.4, 0.7, 2.0, 2.0, true);
    expect(rp == 1.4 && rs == 0.0, "r^P is 2P on a successful stop")?;
    let (rp, _) = fidelity_rewards(0.4, 0.7, 2.0, 3.0, true);
    expect(rp == 0.0, "no r^P bonus for stopping at 3 m")?;
    let (_, rs) = fidelity_rewards(0.5, 0.5, 0.25, 2.0, false);
    expect(
        rs == -2.0 * (1.0 - 0.25),
        "r^S = -2(1-D_prev) when leaving the goal",
    )?;
    let (_, rs) = fidelity_rewards(0.5, 0.5, 1.0, 2.0, false);
    expect(rs == 0.0, "r^S vanishes at D_prev = 1")?;
    let (_, rs) = fidelity_rewards(0.5, 0.5, 1.01, 2.0, false);
    expect(rs == 0.0, "r^S gated off beyond 1 m")?;
    let (_, rs) = fidelity_rewards(0.5, 0.5, 0.5, 0.4, false);
    expect(rs == 0.0, "r^S gated off when approaching")?;
    let (_, rs) = fidelity_rewards(0.5, 0.5, 0.5, 9.0, true);
    expect(rs == 0.0, "no r^S on stop")?;

    let full = RewardConfig::default();
    let d_only = RewardConfig::distance_only();
    let parts = reward_parts(0.2, 0.5, 0.5, 1.5, false, &full);
    expect(
        total_reward(parts, &full) == -1.0 + 0.3 + -1.0,
        "full reward sums all parts",
    )?;
    expect(
        total_reward(parts, &d_only) == -1.0,
        "distance-only keeps r^D alone",
    )?;
    expect(
        !d_only.use_ndtw_reward && !d_only.use_stop_penalty,
        "distance-only disables r^P and r^S",
    )?;
    Ok(n)
}

// ---------------------------------------------------------------- nDTW

/// Minimum over every monotone warping path, accumulated in path order.
pub fn brute_dtw(a: &[usize], b: &[usize], d: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn go(
        i: usize,
        j: usize,
        acc: f64,
        a: &[usize],
        b: &[usize],
        d: &dyn Fn(usize, usize) -> f64,
    ) -> f64 {
        let acc = d(a[i], b[j]) + acc;
        if i + 1 == a.len() && j + 1 == b.len() {
            return acc;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(go(i + 1, j, acc, a, b, d));
        }
        if j + 1 < b.len() {
            best = best.min(go(i, j + 1, acc, a, b, d));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(go(i + 1, j + 1, acc, a, b, d));
        }
        best
    }
    go(0, 0, 0.0, a, b, d)
}

fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn ndtw_checks() -> Outcome {
    // Exhaustive over every pair of node sequences up to length 6 on two
    // nodes, then random pairs on a generated environment.
    let two = |a: usize, b: usize| if a == b { 0.0 } else { 2.5 };
    let seqs = all_sequences(2, 6);
    let mut pairs = 0usize;
    for a in &seqs {
        for b in &seqs {
            let dp = dtw(a, b, &two);
            let bf = brute_dtw(a, b, &two);
            if dp.to_bits() != bf.to_bits() {
                return Outcome::new(false, format!("dtw({a:?}, {b:?}) = {dp}, brute force {bf}"));
            }
            pairs += 1;
        }
    }
    let suite = toy_suite(Task::R2r, 3);
    let env = &suite.environments[0];
    let geo = |a: usize, b: usize| env.geodesic(a, b);
    let mut r = rng(99);
    let n = env.n_nodes();
    for _ in 0..2000 {
        let a: Vec<usize> = (0..r.random_range(1..=6))
            .map(|_| r.random_range(0..n))
            .collect();
        let b: Vec<usize> = (0..r.random_range(1..=6))
            .map(|_| r.random_range(0..n))
            .collect();
        let dp = dtw(&a, &b, &geo);
        let bf = brute_dtw(&a, &b, &geo);
        if dp.to_bits() != bf.to_bits() {
            return Outcome::new(
                false,
                format!("geodesic dtw({a:?}, {b:?}) = {dp}, brute force {bf}"),
            );
        }
        pairs += 1;
    }
    let mut self_ok = true;
    let mut range_ok = true;
    for _ in 0..10_000 {
        let a: Vec<usize> = (0..r.random_range(1..12))
            .map(|_| r.random_range(0..n))
            .collect();
        let b: Vec<usize> = (0..r.random_range(1..12))
            .map(|_| r.random_range(0..n))
            .collect();
        self_ok &= ndtw(&b, &b, SUCCESS_DISTANCE_M, geo) == 1.0;
        let v = ndtw(&a, &b, SUCCESS_DISTANCE_M, geo);
        range_ok &= (0.0..=1.0).contains(&v);
    }
    Outcome::new(
        self_ok && range_ok,
        format!("{pairs} pairs exact vs brute force; self-similarity 1: {self_ok}; 10^4 fuzz in [0,1]: {range_ok}"),
    )
}

// ---------------------------------------------------------------- metric laws

/// Random rollouts (uniform over candidates and stop), scored per episode.
pub fn random_rollout_results(
    suite: &Suite,
    rollouts: usize,
    seed: u64,
) -> Vec<rvb::metrics::EpisodeResult> {
    let mut r = rng(seed);
    (0..rollouts)
        .map(|i| {
            let ep = &suite.episodes[i % suite.len()];
            let env = suite.env_of(ep);
            let mut path = vec![ep.start.node];
            let mut node = ep.start.node;
            for _ in 0..r.random_range(0..15) {
                let nbrs = env.neighbors(node);
                node = nbrs[r.random_range(0..nbrs.len())];
                path.push(node);
            }
            // Bias some stops onto the goal so success branches are exercised.
            if r.random_bool(0.3) {
                let mut extra = env.shortest_path(node, ep.goal);
                extra.remove(0);
                path.extend(extra);
                node = ep.goal;
            }
            let objs = &env.node(node).objects;
            let grounded = (!objs.is_empty()).then(|| objs[r.random_range(0..objs.len())].id);
            evaluate_trajectory(env, ep, suite.task, &path, grounded).unwrap()
        })
        .collect()
}

pub fn metric_laws() -> Outcome {
    let mut violations = Vec::new();
    let mut counts = Vec::new();
    for task in [Task::R2r, Task::Reverie] {
        let suite = toy_suite(task, 21);
        let results = random_rollout_results(&suite, 1000, 5);
        for res in &results {
            if !(0.0..=1.0).contains(&res.spl) {
                violations.push(format!("{task:?} ep {} SPL term {}", res.episode, res.spl));
            }
            if res.spl > f64::from(u8::from(res.success)) {
                violations.push(format!("{task:?} ep {} SPL > SR", res.episode));
            }
            if res.success && !res.oracle_success {
                violations.push(format!("{task:?} ep {} OSR < SR", res.episode));
            }
            if res.rgs && !res.success {
                violations.push(format!("{task:?} ep {} RGS > SR", res.episode));
            }
        }
        let agg = rvb::metrics::aggregate(&results);
        if agg.spl > agg.sr || agg.osr < agg.sr || agg.rgs > agg.sr || agg.rgspl > agg.spl {
            violations.push(format!("{task:?} aggregate {agg:?}"));
        }
        counts.push(format!(
            "{task:?} SR {:.1} SPL {:.1} OSR {:.1} RGS {:.1}",
            agg.sr, agg.spl, agg.osr, agg.rgs
        ));
    }
    Outcome::new(
        violations.is_empty(),
        if violations.is_empty() {
            format!("2 x 1000 rollouts: {}", counts.join("; "))
        } else {
            violations
                .into_iter()
                .take(5)
                .collect::<Vec<_>>()
                .join("; ")
        },
    )
}

// ---------------------------------------------------------------- determinism

pub fn short_train_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 8,
        log_every: 5,
        eval_every: 10,
        eval_episodes: 20,
        ..TrainConfig::default()
    }
}

/// Stats CSV of a short seeded run.
pub fn stats_csv(
    suite: &Suite,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    seed: u64,
) -> rvb::Result<(Vec<u8>, Model)> {
    let model = Model::new(model_cfg.clone(), InputDims::from_suite(suite), seed)?;
    let mut trainer = Trainer::new(model, cfg.clone(), seed)?;
    let mut out = Vec::new();
    trainer.run(suite, None, None, &mut out)?;
    Ok((out, trainer.model))
}

pub fn determinism() -> Outcome {
    let suite = toy_suite(Task::R2r, 8);
    let cfg = short_train_config(30);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| stats_csv(&suite, &cfg, &ModelConfig::default(), 42))
    };
    match (run(4), run(4), run(1)) {
        (Ok((a, _)), Ok((b, _)), Ok((c, _))) => Outcome::new(
            a == b && a == c,
            format!(
                "{} stats bytes; repeat identical: {}; 1 vs 4 threads identical: {}",
                a.len(),
                a == b,
                a == c
            ),
        ),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => Outcome::new(false, e.to_string()),
    }
}

// ---------------------------------------------------------------- two-stream

pub fn two_stream_variant() -> Outcome {
    let suite = toy_suite(Task::R2r, 8);
    let cfg = short_train_config(40);
    let mut ckpts = Vec::new();
    for matching in [true, false] {
        let model_cfg = ModelConfig {
            variant: Variant::TwoStream,
            matching,
            ..ModelConfig::default()
        };
        let model = match stats_csv(&suite, &cfg, &model_cfg, 9) {
            Ok((_, m)) => m,
            Err(e) => return Outcome::new(false, format!("matching {matching}: {e}")),
        };
        if model.store.iter().any(|(_, _, t)| !t.is_finite()) {
            return Outcome::new(false, format!("matching {matching}: non-finite parameters"));
        }
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf, "two-stream").unwrap();
        ckpts.push((buf, model.store.num_scalars()));
    }
    Outcome::new(
        ckpts[0].0 != ckpts[1].0,
        format!(
            "both trained 40 iterations without numeric fault; checkpoints differ ({} vs {} scalars)",
            ckpts[0].1, ckpts[1].1
        ),
    )
}

// ---------------------------------------------------------------- learning

pub struct LearningRun {
    pub model: Model,
    pub train_sr: f64,
    pub val_sr: f64,
    pub baseline_sr: f64,
    pub seconds: f64,
    pub mean_rho: f64,
    pub rho_episodes: usize,
}

pub const LEARN_TRAIN_SEED: u64 = 1;
pub const LEARN_VAL_SEED: u64 = 999;
pub const LEARN_MODEL_SEED: u64 = 7;
pub const LEARN_TRAINER_SEED: u64 = 3;
pub const BASELINE_TRIALS: usize = 20;

pub fn learning_suites() -> (Suite, Suite) {
    let train = generate_suite(&SuiteConfig {
        seed: LEARN_TRAIN_SEED,
        ..SuiteConfig::default()
    })
    .unwrap();
    let val = generate_suite(&SuiteConfig {
        seed: LEARN_VAL_SEED,
        ..SuiteConfig::default()
    })
    .unwrap();
    (train, val)
}

/// Mean per-episode Spearman correlation between step index and the state
/// token's language-attention centroid.
pub fn mean_progress_rho(traces: &[Vec<rvb::agent::StepRecord>]) -> (f64, usize) {
    let rhos: Vec<f64> = traces
        .iter()
        .filter_map(|t| {
            let w: Vec<Vec<f64>> = t.iter().map(|s| s.attn_lang.clone()).collect();
            attention_progress_stat(&w, &[]).rho
        })
        .collect();
    (
        rhos.iter().sum::<f64>() / rhos.len().max(1) as f64,
        rhos.len(),
    )
}

pub fn learning_run(iterations: usize) -> rvb::Result<LearningRun> {
    let (train, val) = learning_suites();
    let baseline_sr =
        random_walk_baseline(&val, rvb::agent::DEFAULT_MAX_STEPS, BASELINE_TRIALS, 0)?.sr;
    let model = Model::new(
        ModelConfig::default(),
        InputDims::from_suite(&train),
        LEARN_MODEL_SEED,
    )?;
    let cfg = TrainConfig {
        iterations,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg, LEARN_TRAINER_SEED)?;
    let start = Instant::now();
    for _ in 0..iterations {
        trainer.train_iteration(&train)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    let tr = evaluate_model(&trainer.model, &train, rvb::agent::DEFAULT_MAX_STEPS, 0)?;
    let va = evaluate_model(&trainer.model, &val, rvb::agent::DEFAULT_MAX_STEPS, 0)?;
    let (mean_rho, rho_episodes) = mean_progress_rho(&va.traces);
    Ok(LearningRun {
        model: trainer.model,
        train_sr: tr.aggregate.sr,
        val_sr: va.aggregate.sr,
        baseline_sr,
        seconds,
        mean_rho,
        rho_episodes,
    })
}
