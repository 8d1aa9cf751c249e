//! Greedy evaluation of a checkpoint, with per-episode metrics.
//!
//! `cargo run --release --example eval -- <checkpoint> [suite.json]`
//!
//! Without arguments a model is briefly trained on the bundled fixture first.

use std::path::{Path, PathBuf};

use rvb::agent::{InputDims, Model, ModelConfig, DEFAULT_MAX_STEPS};
use rvb::envsim::Suite;
use rvb::metrics::random_walk_baseline;
use rvb::training::{evaluate_model, TrainConfig, Trainer};

fn main() -> rvb::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let args: Vec<String> = std::env::args().skip(1).collect();
    let suite_path = args
        .get(1)
        .map_or_else(|| fixtures.join("tiny_val.json"), PathBuf::from);
    let suite = Suite::load(&suite_path)?;

    let model = match args.first() {
        Some(ckpt) => Model::load(Path::new(ckpt))?,
        None => {
            let train = Suite::load(&fixtures.join("tiny_train.json"))?;
            let model = Model::new(ModelConfig::default(), InputDims::from_suite(&train), 11)?;
            let mut trainer = Trainer::new(model, TrainConfig::default(), 11)?;
            for _ in 0..200 {
                trainer.train_iteration(&train)?;
            }
            trainer.model
        }
    };

    let out = evaluate_model(&model, &suite, DEFAULT_MAX_STEPS, 0)?;
    for r in out.results.iter().take(5) {
        println!(
            "episode {:>3}: path {:?} NE {:.2} m success {} SPL {:.2} nDTW {:.3}",
            r.episode, r.path, r.ne, r.success, r.spl, r.ndtw
        );
    }
    println!("\n{} episodes", out.results.len());
    print!("{}", out.aggregate.text_table());
    let baseline = random_walk_baseline(&suite, DEFAULT_MAX_STEPS, 20, 0)?;
    println!("random-walk SR {:.2}%", baseline.sr);
    Ok(())
}
