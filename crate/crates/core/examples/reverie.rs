//! REVERIE-style object goal: the agent stops by choosing an object token,
//! and success additionally requires grounding the target object.

use rvb::agent::{InputDims, Model, ModelConfig, DEFAULT_MAX_STEPS};
use rvb::envsim::{generate_suite, SuiteConfig, Task};
use rvb::training::{evaluate_model, TrainConfig, Trainer};

fn main() -> rvb::Result<()> {
    let cfg = |seed| SuiteConfig {
        seed,
        task: Task::Reverie,
        n_environments: 4,
        n_episodes: 80,
        ..SuiteConfig::default()
    };
    let train = generate_suite(&cfg(21))?;
    let val = generate_suite(&cfg(22))?;

    let model_cfg = ModelConfig {
        task: Task::Reverie,
        ..ModelConfig::default()
    };
    let model = Model::new(model_cfg, InputDims::from_suite(&train), 5)?;
    let untrained = evaluate_model(&model, &val, DEFAULT_MAX_STEPS, 0)?;
    let mut trainer = Trainer::new(model, TrainConfig::default(), 5)?;
    for _ in 0..300 {
        trainer.train_iteration(&train)?;
    }
    let trained = evaluate_model(&trainer.model, &val, DEFAULT_MAX_STEPS, 0)?;

    println!("untrained\n{}", untrained.aggregate.text_table());
    println!("after 300 iterations\n{}", trained.aggregate.text_table());
    let ep = &val.episodes[0];
    let trace = &trained.traces[0];
    println!(
        "episode 0: target object {:?}, grounded {:?}, path {:?}",
        ep.target_object,
        trace.last().and_then(|s| s.grounded_object),
        trained.results[0].path
    );
    Ok(())
}
