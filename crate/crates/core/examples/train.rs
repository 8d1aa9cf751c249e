//! Train an R2R agent with mixed imitation and actor-critic updates on the
//! bundled 10-node fixture, logging stats and checkpoints to a directory.
//!
//! `cargo run --release --example train -- [iterations] [out_dir]`

use std::fs::File;
use std::path::{Path, PathBuf};

use rvb::agent::{InputDims, Model, ModelConfig};
use rvb::envsim::Suite;
use rvb::training::{TrainConfig, Trainer};

fn main() -> rvb::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args
        .next()
        .map_or(Ok(300), |s| s.parse())
        .expect("iterations must be an integer");
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("rvb_train"), PathBuf::from);

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let train = Suite::load(&fixtures.join("tiny_train.json"))?;
    let val = Suite::load(&fixtures.join("tiny_val.json"))?;

    let model = Model::new(ModelConfig::default(), InputDims::from_suite(&train), 11)?;
    println!("{} parameters", model.store.num_scalars());
    let cfg = TrainConfig {
        iterations,
        log_every: 25,
        eval_every: 100,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg, 11)?;

    std::fs::create_dir_all(&out)?;
    let stats = File::create(out.join("stats.csv"))?;
    let summary = trainer.run(&train, Some(&val), Some(&out), stats)?;

    println!(
        "best val SPL {:.2} at iteration {}",
        summary.best_spl, summary.best_iteration
    );
    println!("train\n{}", summary.final_train.text_table());
    if let Some(v) = &summary.final_val {
        println!("val\n{}", v.text_table());
    }
    println!("stats and checkpoints in {}", out.display());
    Ok(())
}
