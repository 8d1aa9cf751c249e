//! Generate a seeded R2R suite, summarise it and write it to disk.
//!
//! `cargo run --example gen_env -- [seed] [out.json]`

use std::path::PathBuf;

use rvb::agent::DEFAULT_MAX_STEPS;
use rvb::envsim::{generate_suite, Suite, SuiteConfig};
use rvb::metrics::random_walk_baseline;

fn main() -> rvb::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args
        .next()
        .map_or(Ok(1), |s| s.parse())
        .expect("seed must be an integer");
    let out = args.next().map_or_else(
        || std::env::temp_dir().join("rvb_suite.json"),
        PathBuf::from,
    );

    let suite = generate_suite(&SuiteConfig {
        seed,
        ..SuiteConfig::default()
    })?;
    let env = &suite.environments[0];
    println!(
        "{} environments, {} episodes, vocabulary of {} words",
        suite.environments.len(),
        suite.len(),
        suite.vocab.len()
    );
    println!(
        "environment 0: {} nodes, mean degree {:.2}, hop diameter {}",
        env.n_nodes(),
        env.mean_degree(),
        env.hop_diameter()
    );
    println!("mean path length {:.2} m", suite.mean_path_length());

    let ep = &suite.episodes[0];
    println!("episode 0: path {:?}", ep.path);
    println!(
        "  instruction: {}",
        ep.instruction
            .iter()
            .map(|&w| suite.vocab.word(w))
            .collect::<Vec<_>>()
            .join(" ")
    );

    let baseline = random_walk_baseline(&suite, DEFAULT_MAX_STEPS, 20, seed)?;
    println!(
        "random-walk baseline: SR {:.2}%  SPL {:.2}%",
        baseline.sr, baseline.spl
    );

    suite.save(&out)?;
    assert_eq!(Suite::load(&out)?, suite);
    println!("wrote {}", out.display());
    Ok(())
}
