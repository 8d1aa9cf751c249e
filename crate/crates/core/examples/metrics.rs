//! Navigation metrics on hand-built trajectories in a generated environment.

use rvb::envsim::{generate_suite, SuiteConfig};
use rvb::metrics::{aggregate, evaluate_trajectory};
use rvb::training::ndtw;

fn main() -> rvb::Result<()> {
    let suite = generate_suite(&SuiteConfig {
        seed: 4,
        n_environments: 1,
        n_episodes: 5,
        min_hops: 3,
        ..SuiteConfig::default()
    })?;
    let ep = &suite.episodes[0];
    let env = suite.env_of(ep);
    println!(
        "reference path {:?}, {:.2} m",
        ep.path,
        env.geodesic(ep.path[0], ep.goal)
    );

    let detour: Vec<usize> = {
        let first = ep.path[0];
        let side = *env
            .neighbors(first)
            .iter()
            .find(|&&n| n != ep.path[1])
            .unwrap_or(&ep.path[1]);
        let mut p = vec![first, side, first];
        p.extend_from_slice(&ep.path[1..]);
        p
    };
    let early_stop = ep.path[..2].to_vec();

    let mut results = Vec::new();
    for (name, traj) in [
        ("reference", ep.path.clone()),
        ("detour", detour),
        ("early stop", early_stop),
    ] {
        let r = evaluate_trajectory(env, ep, suite.task, &traj, None)?;
        let by_hand = ndtw(&traj, &ep.path, 3.0, |a, b| env.geodesic(a, b));
        println!(
            "{name:<10} TL {:>6.2}  NE {:>5.2}  success {:<5}  SPL {:.3}  nDTW {:.3} (direct {:.3})",
            r.tl, r.ne, r.success, r.spl, r.ndtw, by_hand
        );
        results.push(r);
    }
    println!("\n{}", aggregate(&results).text_table());
    Ok(())
}
