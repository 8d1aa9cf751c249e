use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{InputDims, ModelConfig, Variant};
use super::decision::{head_mean_scores, subset_softmax};
use super::two_stream::{cross_layer, CrossLayerParams};
use crate::envsim::{Observation, Task};
use crate::error::{Error, Result};
use crate::tensor::init::xavier_uniform;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::training::critic::CriticParams;
use crate::transformer::{
    build_nav_mask, encode_stack, AttentionMask, Dropout, EncoderLayerParams, HeadOutput,
    LangAttnPolicy, TokenRole, LN_EPS,
};

#[derive(Clone, Debug)]
struct Embeddings {
    word: ParamId,
    position: ParamId,
    type_language: ParamId,
    type_scene: ParamId,
    type_object: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
}

#[derive(Clone, Debug)]
struct TwoStreamParams {
    lang: Vec<EncoderLayerParams>,
    vis1: Vec<EncoderLayerParams>,
    cross: Vec<CrossLayerParams>,
    vis2: Vec<EncoderLayerParams>,
}

#[derive(Clone, Debug)]
enum Backbone {
    OneStream(Vec<EncoderLayerParams>),
    TwoStream(TwoStreamParams),
}

/// Recurrent state carried between navigation steps.
#[derive(Clone, Debug)]
pub struct AgentState {
    /// State token `s_t`, `[1, hidden]`.
    pub s: Var,
    /// Language tokens encoded at initialisation, `[n_lang, hidden]`.
    pub x: Var,
    /// Embedded words before any encoder layer, `[n_lang, hidden]`.
    pub emb: Var,
    /// Language input to the next step (depends on the policy).
    pub lang: Var,
    pub t: usize,
    pub episode: usize,
}

/// Final-layer attention of one key token, averaged over heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub role: TokenRole,
    /// Index within its role.
    pub index: usize,
    pub mean_score: f64,
    pub mean_weight: f64,
}

pub struct StepOutput {
    /// `s^r`: state row after the encoder.
    pub s_raw: Var,
    /// `s^f`: state after cross-modal matching (equals `s_raw` when off).
    pub s_refined: Var,
    /// Action distribution `[1, n_candidates + 1]`, stop last.
    pub p_a: Var,
    pub p_o: Option<Var>,
    pub attn_lang: Var,
    pub attn_vis: Var,
    pub attn_obj: Option<Var>,
    /// Per-head final-layer state-row scores, `[1, n_keys]` each.
    pub head_scores: Vec<Var>,
    /// Language tokens this step consumed, and the ones it produced when
    /// the policy re-encodes them.
    pub lang_in: Var,
    pub lang_out: Option<Var>,
    pub scene_in: Var,
    pub attention: Vec<AttentionEntry>,
    /// For each scene token, its head-averaged weights over language tokens.
    pub scene_lang_weights: Vec<Vec<f64>>,
}

impl StepOutput {
    pub fn p_a_values<'g>(&self, g: &'g Graph) -> &'g [f64] {
        g.value(self.p_a).data()
    }
}

/// Projected scene and object tokens of one observation.
pub struct VisualInputs {
    pub scene: Var,
    pub objects: Option<Var>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    dims: InputDims,
    #[serde(default)]
    note: String,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub dims: InputDims,
    pub store: ParamStore,
    emb: Embeddings,
    input_scene: ParamId,
    input_object: ParamId,
    bbox: ParamId,
    backbone: Backbone,
    wr: Option<ParamId>,
    ws: ParamId,
    pub critic: CriticParams,
}

fn layers(
    store: &mut ParamStore,
    prefix: &str,
    n: usize,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<EncoderLayerParams> {
    (0..n)
        .map(|l| {
            EncoderLayerParams::new(
                store,
                &format!("{prefix}.{l}"),
                cfg.heads,
                cfg.head_dim,
                cfg.ffn_dim,
                rng,
            )
        })
        .collect()
}

impl Model {
    pub fn new(cfg: ModelConfig, dims: InputDims, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = Embeddings {
            word: store.add("embed.word", xavier_uniform(dims.vocab, h, &mut rng)),
            position: store.add(
                "embed.position",
                xavier_uniform(cfg.max_instruction_len, h, &mut rng),
            ),
            type_language: store.add("embed.type.language", xavier_uniform(1, h, &mut rng)),
            type_scene: store.add("embed.type.scene", xavier_uniform(1, h, &mut rng)),
            type_object: store.add("embed.type.object", xavier_uniform(1, h, &mut rng)),
            ln_gain: store.add("embed.ln.gain", Tensor::ones(&[h])),
            ln_bias: store.add("embed.ln.bias", Tensor::zeros(&[h])),
        };
        let input_scene = store.add("input.scene", xavier_uniform(dims.scene_dim, h, &mut rng));
        let input_object = store.add(
            "input.object",
            xavier_uniform(dims.object_feat_dim + 2 * dims.dir_dim, h, &mut rng),
        );
        let bbox = store.add("input.bbox", xavier_uniform(5, dims.dir_dim, &mut rng));
        let backbone = match cfg.variant {
            Variant::OneStream => Backbone::OneStream(layers(
                &mut store,
                "encoder.layer",
                cfg.layers,
                &cfg,
                &mut rng,
            )),
            Variant::TwoStream => {
                let n = cfg.stream_layers;
                let lang = layers(&mut store, "lang.layer", n, &cfg, &mut rng);
                let vis1 = layers(&mut store, "vis1.layer", n, &cfg, &mut rng);
                let cross = (0..n)
                    .map(|l| {
                        CrossLayerParams::new(
                            &mut store,
                            &format!("cross.layer.{l}"),
                            &cfg,
                            &mut rng,
                        )
                    })
                    .collect();
                let vis2 = layers(&mut store, "vis2.layer", n, &cfg, &mut rng);
                Backbone::TwoStream(TwoStreamParams {
                    lang,
                    vis1,
                    cross,
                    vis2,
                })
            }
        };
        let wr = cfg
            .matching
            .then(|| store.add("refine.wr", xavier_uniform(2 * h, h, &mut rng)));
        let ws = store.add("refine.ws", xavier_uniform(h + dims.dir_dim, h, &mut rng));
        let critic = CriticParams::new(&mut store, "critic", h, &mut rng);
        Ok(Self {
            cfg,
            dims,
            store,
            emb,
            input_scene,
            input_object,
            bbox,
            backbone,
            wr,
            ws,
            critic,
        })
    }

    pub fn hidden(&self) -> usize {
        self.cfg.hidden()
    }

    /// Embed `[CLS] U [SEP]`, encode it with full self-attention, and split
    /// the output into `s_0` and the language tokens `X`.
    pub fn init_episode(
        &self,
        g: &mut Graph,
        tokens: &[usize],
        episode: usize,
        dropout: Option<&mut Dropout>,
    ) -> Result<AgentState> {
        if tokens.len() < 3 {
            return Err(Error::Contract(format!(
                "instruction must be [CLS] + at least one word + [SEP], got {} tokens",
                tokens.len()
            )));
        }
        if tokens.len() > self.cfg.max_instruction_len {
            return Err(Error::Contract(format!(
                "instruction has {} tokens, model supports {}",
                tokens.len(),
                self.cfg.max_instruction_len
            )));
        }
        let n = tokens.len();
        let table = g.param(&self.store, self.emb.word);
        let words = g.embedding(table, tokens)?;
        let pos_table = g.param(&self.store, self.emb.position);
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.embedding(pos_table, &positions)?;
        let sum = g.add(words, pos)?;
        let ty = g.param(&self.store, self.emb.type_language);
        let sum = g.add_row(sum, ty)?;
        let gain = g.param(&self.store, self.emb.ln_gain);
        let bias = g.param(&self.store, self.emb.ln_bias);
        let embedded = g.layer_norm(sum, gain, bias, LN_EPS)?;

        let stack = match &self.backbone {
            Backbone::OneStream(l) => l.as_slice(),
            Backbone::TwoStream(p) => p.lang.as_slice(),
        };
        let mut roles = vec![TokenRole::State];
        roles.extend(std::iter::repeat_n(TokenRole::Language, n - 1));
        let mask = AttentionMask::full(roles)?;
        let out = encode_stack(g, &self.store, stack, embedded, &mask, dropout)?;
        let s = g.slice_rows(out.seq, 0, 1)?;
        let x = g.slice_rows(out.seq, 1, n - 1)?;
        let emb = g.slice_rows(embedded, 1, n - 1)?;
        let lang = match (self.cfg.variant, self.cfg.lang_attn_policy) {
            (Variant::OneStream, LangAttnPolicy::EmbAttn) => emb,
            _ => x,
        };
        Ok(AgentState {
            s,
            x,
            emb,
            lang,
            t: 0,
            episode,
        })
    }

    /// Project scene tokens (and objects, when present) into the hidden size.
    pub fn observe(&self, g: &mut Graph, obs: &Observation) -> Result<VisualInputs> {
        let rows = obs.scene_tokens();
        if rows.iter().any(|r| r.len() != self.dims.scene_dim) {
            return Err(Error::Shape {
                op: "observe",
                lhs: vec![rows.len(), rows.first().map_or(0, Vec::len)],
                rhs: vec![self.dims.scene_dim],
            });
        }
        let raw = g.constant(Tensor::from_rows(&rows)?);
        let w = g.param(&self.store, self.input_scene);
        let scene = g.matmul(raw, w)?;
        let ty = g.param(&self.store, self.emb.type_scene);
        let scene = g.add_row(scene, ty)?;

        let objects = if obs.objects.is_empty() {
            None
        } else {
            let feat = g.constant(Tensor::from_rows(
                &obs.objects
                    .iter()
                    .map(|o| o.feature.clone())
                    .collect::<Vec<_>>(),
            )?);
            let pos = g.constant(Tensor::from_rows(
                &obs.objects
                    .iter()
                    .map(|o| o.position.to_vec())
                    .collect::<Vec<_>>(),
            )?);
            let dir = g.constant(Tensor::from_rows(
                &obs.objects
                    .iter()
                    .map(|o| o.direction.clone())
                    .collect::<Vec<_>>(),
            )?);
            let wp = g.param(&self.store, self.bbox);
            let pos = g.matmul(pos, wp)?;
            let cat = g.concat_cols(&[feat, pos, dir])?;
            let w = g.param(&self.store, self.input_object);
            let o = g.matmul(cat, w)?;
            let ty = g.param(&self.store, self.emb.type_object);
            Some(g.add_row(o, ty)?)
        };
        Ok(VisualInputs { scene, objects })
    }

    /// One recurrent step. The input state is not modified; call
    /// [`Model::commit`] with the chosen action to obtain `s_t`.
    pub fn step(
        &self,
        g: &mut Graph,
        state: &AgentState,
        obs: &Observation,
        dropout: Option<&mut Dropout>,
    ) -> Result<StepOutput> {
        if obs.candidates.is_empty() {
            return Err(Error::Contract(
                "observation has no navigable candidates".into(),
            ));
        }
        if obs.task != self.cfg.task {
            return Err(Error::Contract(format!(
                "model configured for {:?}, observation is {:?}",
                self.cfg.task, obs.task
            )));
        }
        if self.cfg.task == Task::Reverie && obs.objects.is_empty() {
            return Err(Error::Contract(
                "REVERIE step needs at least one object token".into(),
            ));
        }
        let vis = self.observe(g, obs)?;
        match &self.backbone {
            Backbone::OneStream(l) => self.step_one_stream(g, l, state, &vis, dropout),
            Backbone::TwoStream(p) => self.step_two_stream(g, p, state, &vis, dropout),
        }
    }

    fn step_one_stream(
        &self,
        g: &mut Graph,
        stack: &[EncoderLayerParams],
        state: &AgentState,
        vis: &VisualInputs,
        dropout: Option<&mut Dropout>,
    ) -> Result<StepOutput> {
        let lang_in = state.lang;
        let n_lang = g.value(lang_in).rows();
        let n_scene = g.value(vis.scene).rows();
        let n_obj = vis.objects.map_or(0, |o| g.value(o).rows());
        let mut parts = vec![state.s, lang_in, vis.scene];
        parts.extend(vis.objects);
        let seq = g.concat_rows(&parts)?;
        let mask = build_nav_mask(n_lang, n_scene, n_obj, self.cfg.lang_attn_policy)?;
        let out = encode_stack(g, &self.store, stack, seq, &mask, dropout)?;
        let last = out.layers.last().expect("at least one layer");

        let s_raw = g.slice_rows(out.seq, 0, 1)?;
        let head_scores = last
            .iter()
            .map(|h| g.select_rows(h.scores, &[0]))
            .collect::<Result<Vec<_>>>()?;
        let mean = head_mean_scores(g, last, 0)?;
        let lang_cols = mask.keys_with_role(TokenRole::Language);
        let scene_cols = mask.keys_with_role(TokenRole::Scene);
        let obj_cols = mask.keys_with_role(TokenRole::Object);

        let attn_lang = subset_softmax(g, mean, &lang_cols)?;
        let attn_vis = subset_softmax(g, mean, &scene_cols)?;
        let (p_a, p_o) = if obj_cols.is_empty() {
            (attn_vis, None)
        } else {
            let scene_scores = g.select_cols(mean, &scene_cols)?;
            let obj_scores = g.select_cols(mean, &obj_cols)?;
            let best = super::decision::argmax(g.value(obj_scores).data());
            let stop_logit = g.select_cols(obj_scores, &[best])?;
            let logits = g.concat_cols(&[scene_scores, stop_logit])?;
            let p_a = g.softmax_rows(logits, None)?;
            let p_o = g.softmax_rows(obj_scores, None)?;
            (p_a, Some(p_o))
        };

        let s_refined = self.refine(g, s_raw, attn_lang, attn_vis, lang_in, vis.scene)?;
        let lang_out = if self.cfg.lang_attn_policy.reencodes_language() {
            Some(g.slice_rows(out.seq, 1, n_lang)?)
        } else {
            None
        };
        let attention = attention_entries(g, last, &mask, 0);
        let scene_lang_weights = scene_cols
            .iter()
            .map(|&k| match mask.query_row_of(k) {
                Some(row) => head_mean_weights(g, last, row, &lang_cols),
                None => vec![0.0; lang_cols.len()],
            })
            .collect();
        Ok(StepOutput {
            s_raw,
            s_refined,
            p_a,
            p_o,
            attn_lang,
            attn_vis,
            attn_obj: p_o,
            head_scores,
            lang_in,
            lang_out,
            scene_in: vis.scene,
            attention,
            scene_lang_weights,
        })
    }

    fn step_two_stream(
        &self,
        g: &mut Graph,
        p: &TwoStreamParams,
        state: &AgentState,
        vis: &VisualInputs,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<StepOutput> {
        let x = state.x;
        let n_lang = g.value(x).rows();
        let n_scene = g.value(vis.scene).rows();

        let scene_mask = AttentionMask::full(vec![TokenRole::Scene; n_scene])?;
        let v1 = encode_stack(
            g,
            &self.store,
            &p.vis1,
            vis.scene,
            &scene_mask,
            dropout.as_deref_mut(),
        )?;
        let mut q = g.concat_rows(&[state.s, v1.seq])?;
        let mut cross_heads = Vec::new();
        for layer in &p.cross {
            let out = cross_layer(g, &self.store, layer, q, x, dropout.as_deref_mut())?;
            q = out.out;
            cross_heads = out.cross_heads;
        }

        let mut roles = vec![TokenRole::State];
        roles.extend(std::iter::repeat_n(TokenRole::Scene, n_scene));
        let vis_mask = AttentionMask::full(roles)?;
        let v2 = encode_stack(g, &self.store, &p.vis2, q, &vis_mask, dropout)?;
        let last = v2.layers.last().expect("at least one layer");

        let s_raw = g.slice_rows(v2.seq, 0, 1)?;
        let head_scores = last
            .iter()
            .map(|h| g.select_rows(h.scores, &[0]))
            .collect::<Result<Vec<_>>>()?;
        let mean = head_mean_scores(g, last, 0)?;
        let scene_cols: Vec<usize> = (1..=n_scene).collect();
        let attn_vis = subset_softmax(g, mean, &scene_cols)?;
        let lang_mean = head_mean_scores(g, &cross_heads, 0)?;
        let lang_cols: Vec<usize> = (0..n_lang).collect();
        let attn_lang = subset_softmax(g, lang_mean, &lang_cols)?;

        let s_refined = self.refine(g, s_raw, attn_lang, attn_vis, x, vis.scene)?;

        let lang_mask = AttentionMask::new(
            vec![TokenRole::Language; n_lang],
            (0..n_lang).collect(),
            vec![true; n_lang * n_lang],
        )?;
        let mut attention = attention_entries(g, &cross_heads, &lang_mask, 0);
        attention.extend(attention_entries(g, last, &vis_mask, 0));
        let scene_lang_weights = (1..=n_scene)
            .map(|row| head_mean_weights(g, &cross_heads, row, &lang_cols))
            .collect();
        Ok(StepOutput {
            s_raw,
            s_refined,
            p_a: attn_vis,
            p_o: None,
            attn_lang,
            attn_vis,
            attn_obj: None,
            head_scores,
            lang_in: x,
            lang_out: None,
            scene_in: vis.scene,
            attention,
            scene_lang_weights,
        })
    }

    fn refine(
        &self,
        g: &mut Graph,
        s_raw: Var,
        attn_lang: Var,
        attn_vis: Var,
        lang: Var,
        scene: Var,
    ) -> Result<Var> {
        match self.wr {
            None => Ok(s_raw),
            Some(id) => {
                let wr = g.param(&self.store, id);
                let x_in = (self.cfg.task == Task::R2r).then_some(lang);
                let a_x = (self.cfg.task == Task::R2r).then_some(attn_lang);
                refine_state(g, wr, s_raw, a_x, attn_vis, x_in, scene)
            }
        }
    }

    /// Fold the chosen action into the state and advance the language input.
    pub fn commit(
        &self,
        g: &mut Graph,
        state: &AgentState,
        out: &StepOutput,
        action_direction: &[f64],
    ) -> Result<AgentState> {
        let ws = g.param(&self.store, self.ws);
        let s = record_decision(g, ws, out.s_refined, action_direction)?;
        let lang = match self.cfg.lang_attn_policy {
            LangAttnPolicy::InitOnly | LangAttnPolicy::InitAttn => state.x,
            LangAttnPolicy::EmbAttn => state.emb,
            LangAttnPolicy::ReAttn => out.lang_out.unwrap_or(state.lang),
        };
        let lang = if self.cfg.variant == Variant::TwoStream {
            state.x
        } else {
            lang
        };
        Ok(AgentState {
            s,
            x: state.x,
            emb: state.emb,
            lang,
            t: state.t + 1,
            episode: state.episode,
        })
    }

    pub fn write_checkpoint<W: Write>(&self, w: W, note: &str) -> Result<()> {
        let meta = CheckpointMeta {
            model: self.cfg.clone(),
            dims: self.dims,
            note: note.to_string(),
        };
        self.store
            .write_checkpoint(w, &serde_json::to_string(&meta)?)
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let (store, meta) = ParamStore::read_checkpoint(r)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint metadata: {e}")))?;
        let mut model = Self::new(meta.model, meta.dims, 0)?;
        model.store.load_from(&store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, note: &str) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut w, note)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Cross-modal matching. With language (`R2R`):
/// `s^f = [s^r; (Ã^{s,x} X_in) ⊙ (Ã^{s,v} V_in)] W^r`; without it (REVERIE):
/// `s^f = [s^r; Ã^{s,v} V_in] W^r`.
pub fn refine_state(
    g: &mut Graph,
    wr: Var,
    s_raw: Var,
    attn_lang: Option<Var>,
    attn_vis: Var,
    lang_in: Option<Var>,
    scene_in: Var,
) -> Result<Var> {
    let f_v = g.matmul(attn_vis, scene_in)?;
    let fused = match (attn_lang, lang_in) {
        (Some(a), Some(x)) => {
            let f_x = g.matmul(a, x)?;
            g.mul(f_x, f_v)?
        }
        (None, None) => f_v,
        _ => {
            return Err(Error::Contract(
                "language weights and tokens must be given together".into(),
            ))
        }
    };
    let cat = g.concat_cols(&[s_raw, fused])?;
    g.matmul(cat, wr)
}

/// `s_t = [s^f; a_t] W^s`; `a_t` is the zero vector for stop.
pub fn record_decision(
    g: &mut Graph,
    ws: Var,
    s_refined: Var,
    action_direction: &[f64],
) -> Result<Var> {
    let a = g.constant(Tensor::row(action_direction.to_vec()));
    let cat = g.concat_cols(&[s_refined, a])?;
    g.matmul(cat, ws)
}

fn head_mean_weights(g: &Graph, heads: &[HeadOutput], row: usize, cols: &[usize]) -> Vec<f64> {
    let k = heads.len() as f64;
    cols.iter()
        .map(|&c| {
            heads
                .iter()
                .map(|h| g.value(h.weights).at(row, c))
                .sum::<f64>()
                / k
        })
        .collect()
}

fn attention_entries(
    g: &Graph,
    heads: &[HeadOutput],
    mask: &AttentionMask,
    row: usize,
) -> Vec<AttentionEntry> {
    let k = heads.len() as f64;
    let mut seen = std::collections::HashMap::new();
    mask.key_roles()
        .iter()
        .enumerate()
        .map(|(c, &role)| {
            let index = seen.entry(role).or_insert(0usize);
            let e = AttentionEntry {
                role,
                index: *index,
                mean_score: heads
                    .iter()
                    .map(|h| g.value(h.scores).at(row, c))
                    .sum::<f64>()
                    / k,
                mean_weight: heads
                    .iter()
                    .map(|h| g.value(h.weights).at(row, c))
                    .sum::<f64>()
                    / k,
            };
            *index += 1;
            e
        })
        .collect()
}
