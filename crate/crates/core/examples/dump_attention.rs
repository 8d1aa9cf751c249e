//! Per-step language attention of the state token and its progress
//! statistic: the weighted token position (centroid) at each step, and its
//! Spearman correlation with the step index.

use std::path::Path;

use rvb::agent::{InputDims, Model, ModelConfig, DEFAULT_MAX_STEPS};
use rvb::envsim::Suite;
use rvb::metrics::attention_progress_stat;
use rvb::training::{evaluate_model, TrainConfig, Trainer};

fn bar(weights: &[f64]) -> String {
    const LEVELS: [char; 5] = [' ', '.', ':', '*', '#'];
    weights
        .iter()
        .map(|w| LEVELS[((w * 4.0 * 2.0).round() as usize).min(4)])
        .collect()
}

fn main() -> rvb::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let train = Suite::load(&fixtures.join("tiny_train.json"))?;
    let val = Suite::load(&fixtures.join("tiny_val.json"))?;

    let model = Model::new(ModelConfig::default(), InputDims::from_suite(&train), 11)?;
    let mut trainer = Trainer::new(model, TrainConfig::default(), 11)?;
    for _ in 0..200 {
        trainer.train_iteration(&train)?;
    }

    let out = evaluate_model(&trainer.model, &val, DEFAULT_MAX_STEPS, 4)?;
    for (ep, steps) in val.episodes.iter().zip(&out.traces) {
        let words: Vec<String> = ep.instruction.iter().map(|&w| val.vocab.word(w)).collect();
        println!("episode {}: {}", ep.id, words.join(" "));
        for s in steps {
            println!("  step {} |{}|", s.t, bar(&s.attn_lang));
        }
        let lang: Vec<Vec<f64>> = steps.iter().map(|s| s.attn_lang.clone()).collect();
        let sel: Vec<Vec<f64>> = steps.iter().map(|s| s.selected_lang.clone()).collect();
        let stat = attention_progress_stat(&lang, &sel);
        let centroids: Vec<String> = stat.centroids.iter().map(|c| format!("{c:.2}")).collect();
        println!(
            "  centroids [{}]  rho {:?}\n",
            centroids.join(", "),
            stat.rho
        );
    }
    Ok(())
}
