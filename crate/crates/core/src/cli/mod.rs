//! Command-line front end: `gen-env`, `train`, `eval` and `dump-attention`.
//!
//! Every command writes only under its `--out` directory and serialises the
//! resolved configuration next to its outputs.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{resolve_seed, RunConfig, SEED_ENV};

use crate::agent::{InputDims, Model, StepRecord, DEFAULT_MAX_STEPS};
use crate::envsim::{generate_suite, GenConfig, Suite, SuiteConfig, Task};
use crate::error::{Error, Result};
use crate::metrics::{
    attention_progress_stat, random_walk_baseline, Aggregate, EpisodeResult, TABLE_COLUMNS,
};
use crate::training::{evaluate_model, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Monte-Carlo trials per episode for the random-walk baseline.
pub const BASELINE_TRIALS: usize = 20;

pub const SUITE_FILE: &str = "suite.json";
pub const STATS_FILE: &str = "stats.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const PROGRESS_FILE: &str = "progress.csv";
pub const PROGRESS_SUMMARY_FILE: &str = "progress_summary.csv";
pub const ATTENTION_HEADER: &str = "episode,step,token_role,token_index,mean_score,mean_weight";

#[derive(Debug, Parser)]
#[command(
    name = "rvb",
    version,
    about = "Recurrent transformer navigation agent on synthetic graphs"
)]
pub struct Cli {
    /// Upper bound on worker threads for parallel rollouts (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded environment + episode suite.
    GenEnv(GenEnvArgs),
    /// Train an agent from a TOML run config.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint on a suite.
    Eval(EvalArgs),
    /// Per-step final-layer attention and the progress statistic.
    DumpAttention(DumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    R2r,
    Reverie,
}

impl From<Mode> for Task {
    fn from(m: Mode) -> Task {
        match m {
            Mode::R2r => Task::R2r,
            Mode::Reverie => Task::Reverie,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    #[default]
    Greedy,
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    /// Falls back to $RVB_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = GenConfig::default().n_nodes)]
    pub nodes: usize,
    #[arg(long, default_value_t = SuiteConfig::default().n_episodes)]
    pub episodes: usize,
    #[arg(long, default_value_t = SuiteConfig::default().n_environments)]
    pub environments: usize,
    #[arg(long, value_enum, default_value_t = Mode::R2r)]
    pub mode: Mode,
    #[arg(long, default_value_t = SuiteConfig::default().min_hops)]
    pub min_hops: usize,
    #[arg(long, default_value_t = SuiteConfig::default().max_hops)]
    pub max_hops: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Greedy)]
    pub mode: EvalMode,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub suite: PathBuf,
    /// Dump at most this many episodes; 0 means all.
    #[arg(long, default_value_t = 0)]
    pub episodes: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for an error: 2 for configuration and input contract problems,
/// 3 for numeric faults, 4 for I/O and unreadable artifacts.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) | Error::Format(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Numeric(_)
        | Error::Shape { .. }
        | Error::InvalidMask { .. }
        | Error::Index { .. } => EXIT_NUMERIC,
        Error::Io(_) | Error::Checkpoint(_) => EXIT_IO,
    }
}

/// Parse `args`, run, report errors on stderr and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenEnv(a) => gen_env(&a).map(|s| print!("{s}")),
        Command::Train(a) => train(&a).map(|s| print!("{s}")),
        Command::Eval(a) => eval(&a).map(|s| print!("{s}")),
        Command::DumpAttention(a) => dump_attention(&a).map(|s| print!("{s}")),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

pub(crate) fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn require_file(path: &Path) -> Result<()> {
    fs::metadata(path)
        .map(|_| ())
        .map_err(|e| io_context(path, e))
}

fn load_suite(path: &Path) -> Result<Suite> {
    require_file(path)?;
    Suite::load(path)
}

fn load_inputs(checkpoint: &Path, suite: &Path) -> Result<(Model, Suite)> {
    require_file(checkpoint)?;
    let model = Model::load(checkpoint)?;
    let suite = load_suite(suite)?;
    if suite.is_empty() {
        return Err(Error::Contract(format!(
            "suite {} has no episodes",
            suite_label(suite.seed)
        )));
    }
    if model.cfg.task != suite.task {
        return Err(Error::Config(format!(
            "checkpoint is a {:?} model but the suite is {:?}",
            model.cfg.task, suite.task
        )));
    }
    if model.dims != InputDims::from_suite(&suite) {
        return Err(Error::Config(format!(
            "checkpoint input dims {:?} do not match the suite {:?}",
            model.dims,
            InputDims::from_suite(&suite)
        )));
    }
    Ok((model, suite))
}

fn suite_label(seed: u64) -> String {
    format!("(seed {seed})")
}

/// `gen-env`: returns the printed summary.
pub fn gen_env(a: &GenEnvArgs) -> Result<String> {
    let cfg = SuiteConfig {
        seed: resolve_seed(a.seed, None)?,
        task: a.mode.into(),
        n_environments: a.environments,
        n_episodes: a.episodes,
        min_hops: a.min_hops,
        max_hops: a.max_hops,
        env: GenConfig {
            n_nodes: a.nodes,
            ..GenConfig::default()
        },
        ..SuiteConfig::default()
    };
    let suite = generate_suite(&cfg)?;
    let baseline = random_walk_baseline(&suite, DEFAULT_MAX_STEPS, BASELINE_TRIALS, cfg.seed)?;
    fs::create_dir_all(&a.out)?;
    suite.save(&a.out.join(SUITE_FILE))?;
    write_file(&a.out.join("gen-env.toml"), &config::to_toml(&cfg)?)?;
    let mean_hops =
        suite.episodes.iter().map(|e| e.hops() as f64).sum::<f64>() / suite.len().max(1) as f64;
    Ok(format!(
        "nodes per environment: {}\nenvironments: {}\nepisodes: {}\nmean path length: {:.2} m ({mean_hops:.2} hops)\nrandom-walk baseline SR: {:.2}%\nwrote {}\n",
        a.nodes,
        suite.environments.len(),
        suite.len(),
        suite.mean_path_length(),
        baseline.sr,
        a.out.join(SUITE_FILE).display()
    ))
}

/// `train`: returns the printed summary.
pub fn train(a: &TrainArgs) -> Result<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    if let Some(it) = a.iterations {
        cfg.train.iterations = it;
    }
    cfg.seed = Some(resolve_seed(a.seed, cfg.seed)?);
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    let seed = cfg.seed.unwrap_or_default();

    let train_suite = load_suite(&cfg.train_suite)?;
    let val_suite = cfg.val_suite.as_deref().map(load_suite).transpose()?;
    for s in std::iter::once(&train_suite).chain(val_suite.as_ref()) {
        if s.is_empty() {
            return Err(Error::Contract(
                "training and validation suites need episodes".into(),
            ));
        }
        if s.task != cfg.model.task {
            return Err(Error::Config(format!(
                "model task {:?} does not match suite task {:?}",
                cfg.model.task, s.task
            )));
        }
    }
    let dims = InputDims::from_suite(&train_suite);
    if let Some(v) = &val_suite {
        if InputDims::from_suite(v) != dims {
            return Err(Error::Config(
                "training and validation suites have different input dims".into(),
            ));
        }
    }

    fs::create_dir_all(&out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml()?)?;
    let model = Model::new(cfg.model.clone(), dims, seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), seed)?;
    let stats = BufWriter::new(File::create(out.join(STATS_FILE))?);
    let summary = trainer.run(&train_suite, val_suite.as_ref(), Some(&out), stats)?;

    let mut table = format!("split,{}\n", TABLE_COLUMNS.join(","));
    table += &metrics_row("train", &summary.final_train);
    if let Some(v) = &summary.final_val {
        table += &metrics_row("val", v);
    }
    write_file(&out.join("final_metrics.csv"), &table)?;
    let mut msg = format!(
        "trained {} iterations; best SPL {:.2} at iteration {}\n",
        summary.iterations, summary.best_spl, summary.best_iteration
    );
    msg += &format!("train:\n{}", summary.final_train.text_table());
    if let Some(v) = &summary.final_val {
        msg += &format!("val:\n{}", v.text_table());
    }
    msg += &format!("outputs in {}\n", out.display());
    Ok(msg)
}

fn metrics_row(split: &str, agg: &Aggregate) -> String {
    let vals: Vec<String> = agg.values().iter().map(|v| format!("{v:.4}")).collect();
    format!("{split},{}\n", vals.join(","))
}

fn episode_csv(results: &[EpisodeResult]) -> String {
    let mut s =
        String::from("episode,tl,ne,success,spl,oracle_success,rgs,rgspl,ndtw,stopped_node,path\n");
    for r in results {
        let path: Vec<String> = r.path.iter().map(|n| n.to_string()).collect();
        s += &format!(
            "{},{:.6},{:.6},{},{:.6},{},{},{:.6},{:.6},{},{}\n",
            r.episode,
            r.tl,
            r.ne,
            u8::from(r.success),
            r.spl,
            u8::from(r.oracle_success),
            u8::from(r.rgs),
            r.rgspl,
            r.ndtw,
            r.stopped_node,
            path.join(" ")
        );
    }
    s
}

fn trace_csv(results: &[EpisodeResult], traces: &[Vec<StepRecord>]) -> String {
    let mut s = String::from("episode,step,node,action,stop,action_prob,grounded_object\n");
    for (r, steps) in results.iter().zip(traces) {
        for st in steps {
            s += &format!(
                "{},{},{},{},{},{:.6},{}\n",
                r.episode,
                st.t,
                st.node,
                st.action,
                u8::from(st.stop),
                st.p_a[st.action],
                st.grounded_object
                    .map(|o| o.to_string())
                    .unwrap_or_default()
            );
        }
    }
    s
}

#[derive(serde::Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    suite: &'a Path,
    mode: &'static str,
    max_steps: usize,
    threads: usize,
}

/// `eval`: returns the printed metrics table.
pub fn eval(a: &EvalArgs) -> Result<String> {
    let (model, suite) = load_inputs(&a.checkpoint, &a.suite)?;
    let out = evaluate_model(&model, &suite, a.max_steps, 0)?;
    fs::create_dir_all(&a.out)?;
    let echo = EvalEcho {
        checkpoint: &a.checkpoint,
        suite: &a.suite,
        mode: "greedy",
        max_steps: a.max_steps,
        threads: rayon::current_num_threads(),
    };
    write_file(&a.out.join("eval.toml"), &config::to_toml(&echo)?)?;
    write_file(&a.out.join("metrics.csv"), &out.aggregate.csv())?;
    write_file(&a.out.join("metrics.txt"), &out.aggregate.text_table())?;
    write_file(&a.out.join("episodes.csv"), &episode_csv(&out.results))?;
    write_file(
        &a.out.join("traces.csv"),
        &trace_csv(&out.results, &out.traces),
    )?;
    Ok(format!(
        "{} episodes\n{}",
        out.results.len(),
        out.aggregate.text_table()
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `dump-attention`: returns the printed progress summary.
pub fn dump_attention(a: &DumpArgs) -> Result<String> {
    let (model, suite) = load_inputs(&a.checkpoint, &a.suite)?;
    let out = evaluate_model(&model, &suite, a.max_steps, a.episodes)?;
    fs::create_dir_all(&a.out)?;
    let echo = EvalEcho {
        checkpoint: &a.checkpoint,
        suite: &a.suite,
        mode: "greedy",
        max_steps: a.max_steps,
        threads: rayon::current_num_threads(),
    };
    write_file(&a.out.join("dump-attention.toml"), &config::to_toml(&echo)?)?;

    let mut attn = BufWriter::new(File::create(a.out.join(ATTENTION_FILE))?);
    let mut progress = BufWriter::new(File::create(a.out.join(PROGRESS_FILE))?);
    let mut summary = BufWriter::new(File::create(a.out.join(PROGRESS_SUMMARY_FILE))?);
    writeln!(attn, "{ATTENTION_HEADER}")?;
    writeln!(progress, "episode,step,centroid,selected_centroid")?;
    writeln!(summary, "episode,steps,rho,selected_rho")?;
    let (mut rhos, mut sel_rhos) = (Vec::new(), Vec::new());
    for (r, steps) in out.results.iter().zip(&out.traces) {
        for st in steps {
            for e in &st.attention {
                writeln!(
                    attn,
                    "{},{},{},{},{:.6},{:.6}",
                    r.episode,
                    st.t,
                    e.role.as_str(),
                    e.index,
                    e.mean_score,
                    e.mean_weight
                )?;
            }
            for (i, w) in st.selected_lang.iter().enumerate() {
                writeln!(attn, "{},{},language@selected,{i},,{w:.6}", r.episode, st.t)?;
            }
        }
        let lang: Vec<Vec<f64>> = steps.iter().map(|s| s.attn_lang.clone()).collect();
        let sel: Vec<Vec<f64>> = steps.iter().map(|s| s.selected_lang.clone()).collect();
        let stat = attention_progress_stat(&lang, &sel);
        for (t, c) in stat.centroids.iter().enumerate() {
            let sc = stat.selected_centroids.get(t).copied();
            writeln!(progress, "{},{t},{c:.6},{}", r.episode, opt(sc))?;
        }
        writeln!(
            summary,
            "{},{},{},{}",
            r.episode,
            steps.len(),
            opt(stat.rho),
            opt(stat.selected_rho)
        )?;
        rhos.extend(stat.rho);
        sel_rhos.extend(stat.selected_rho);
    }
    attn.flush()?;
    progress.flush()?;
    summary.flush()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(format!(
        "{} episodes dumped\nmean Spearman rho (state language centroid vs step): {:.3} over {} episodes\nmean Spearman rho (selected token language centroid vs step): {:.3} over {} episodes\n",
        out.results.len(),
        mean(&rhos),
        rhos.len(),
        mean(&sel_rhos),
        sel_rhos.len()
    ))
}
