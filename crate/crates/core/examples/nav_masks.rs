//! Navigation masks per language policy, and the attention-score MACs one
//! recurrent step actually spends under each.
//!
//! Under `InitOnly` the language tokens are keys and values but never
//! queries, so a step only scores the state and scene rows.

use rvb::agent::{InputDims, Model, ModelConfig};
use rvb::envsim::{generate_suite, scene_features, SuiteConfig};
use rvb::tensor::Graph;
use rvb::transformer::{build_nav_mask, LangAttnPolicy, TokenRole};

fn main() -> rvb::Result<()> {
    let suite = generate_suite(&SuiteConfig {
        seed: 2,
        n_environments: 1,
        n_episodes: 1,
        ..SuiteConfig::default()
    })?;
    let ep = &suite.episodes[0];
    let obs = scene_features(suite.env_of(ep), &ep.start, suite.task, &suite.features);
    let n_lang = ep.instruction.len();
    println!(
        "{} instruction tokens, {} scene tokens at the start node\n",
        n_lang,
        obs.n_scene_tokens()
    );

    for policy in [
        LangAttnPolicy::InitOnly,
        LangAttnPolicy::InitAttn,
        LangAttnPolicy::EmbAttn,
        LangAttnPolicy::ReAttn,
    ] {
        let mask = build_nav_mask(n_lang, obs.n_scene_tokens(), 0, policy)?;
        let lang_queries = mask
            .query_roles()
            .iter()
            .filter(|r| **r == TokenRole::Language)
            .count();

        let cfg = ModelConfig {
            lang_attn_policy: policy,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, InputDims::from_suite(&suite), 0)?;
        let mut g = Graph::inference();
        let state = model.init_episode(&mut g, &ep.instruction, ep.id, None)?;
        let before = g.flops().clone();
        model.step(&mut g, &state, &obs, None)?;
        let after = g.flops();
        println!(
            "{:<9} {:>2} queries x {:>2} keys ({:>2} language)  score MACs {:>6}  total MACs {:>8}",
            format!("{policy:?}"),
            mask.n_queries(),
            mask.n_keys(),
            lang_queries,
            after.attention_scores - before.attention_scores,
            after.total() - before.total()
        );
    }
    Ok(())
}
