use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use eniac::bench::ppo::run_ppo_experiment;
use eniac::bench::ring::{run_ring, RingConfig, RingResult};
use eniac::bench::{evaluate_policy, median, run_experiment, write_csv, AlgorithmId, RunConfig};
use eniac::mdp::{env_reward, exact_value_dp, optimal_q_dp, TabularPolicy};
use eniac::neural_width::WidthTrainRow;
use eniac::rng::seeded;
use eniac::Error;

const LOCK_CONFIG: &str = include_str!("../../../configs/lock.toml");
const MOUNTAIN_CAR_CONFIG: &str = include_str!("../../../configs/mountain_car.toml");

#[derive(Parser)]
#[command(name = "eniac", version, about = "Policy-cover actor-critic with width-function exploration bonuses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "ENIAC_OUT_DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured environment and write metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Clipped-ratio deep-RL mode (mountain car).
        #[arg(long)]
        experiment: bool,
    },
    /// Evaluate a saved tabular policy.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy JSON written by `train`.
        #[arg(long)]
        policy: PathBuf,
        /// Monte-Carlo episodes alongside the exact value.
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
    },
    /// Lock separation and ring width benchmarks; `--extended` adds mountain car.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        extended: bool,
        #[arg(long)]
        experiment: bool,
    },
    /// Train one width-network pair on the 2-D ring fixture.
    WidthDemo {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Acceptance(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Unsupported(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_run(common: &Common, fallback: &str) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml(fallback)?,
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
        cfg.acceptance.min_successes = cfg.acceptance.min_successes.min(1);
    }
    Ok(cfg)
}

fn check_successes(label: &str, successes: usize, needed: usize, total: usize) -> Result<(), Failure> {
    println!("{label}: {successes}/{total} seeds succeeded (need {needed})");
    if successes < needed {
        return Err(Failure::Acceptance(format!("{label}: budget exhausted with {successes}/{needed} successful seeds")));
    }
    Ok(())
}

fn train(common: &Common, experiment: bool) -> Result<(), Failure> {
    let cfg = load_run(common, LOCK_CONFIG)?;
    let out = &common.out;
    if experiment {
        let seeds = run_ppo_experiment(&cfg, out)?;
        for s in &seeds {
            println!("seed {}: best return {:.2}, env steps {}", s.seed, s.best_value, s.env_steps);
        }
        let wins = seeds.iter().filter(|s| s.succeeded).count();
        return check_successes(cfg.env.name(), wins, cfg.acceptance.min_successes, seeds.len());
    }
    let summary = run_experiment(&cfg, out)?;
    for s in &summary.seeds {
        println!("seed {}: final value {:.4}, episodes {}, env steps {}", s.seed, s.final_value, s.episodes, s.env_steps);
    }
    if let Some(v) = summary.optimum {
        println!("optimal value {v:.4}");
    }
    println!("median final value {:.4}; metrics in {}", summary.median_final(), summary.metrics_path.display());
    check_successes(cfg.env.name(), summary.successes(), cfg.acceptance.min_successes, summary.seeds.len())
}

fn eval(common: &Common, policy_path: &Path, episodes: usize) -> Result<(), Failure> {
    let cfg = load_run(common, LOCK_CONFIG)?;
    let mdp = cfg.env.tabular()?.ok_or_else(|| Failure::Config("eval supports tabular environments only".into()))?;
    let text = fs::read_to_string(policy_path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", policy_path.display())))?;
    let policy: TabularPolicy = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("bad policy file: {e}")))?;
    if policy.probs.len() != mdp.num_states() {
        return Err(Failure::Config(format!(
            "policy covers {} states, environment has {}",
            policy.probs.len(),
            mdp.num_states()
        )));
    }
    let reward = env_reward(&mdp);
    let exact = exact_value_dp(&mdp, &policy, &reward, mdp.start(), 1e-10)?;
    let v_star = optimal_q_dp(&mdp, &reward, 1e-10)?.v[mdp.start()];
    let mut rng = seeded(common.seed.unwrap_or(0));
    let mc = evaluate_policy(&mdp, &policy, episodes, &mut rng)?;
    println!("exact value {exact:.4}, Monte-Carlo ({episodes} episodes) {mc:.4}, optimum {v_star:.4}");
    fs::create_dir_all(&common.out)?;
    fs::write(
        common.out.join("eval.csv"),
        format!("exact_value,mc_value,episodes,optimum\n{exact},{mc},{episodes},{v_star}\n"),
    )?;
    Ok(())
}

fn ring_config(common: &Common) -> Result<RingConfig, Failure> {
    match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg: RingConfig = toml::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
            cfg.train.validate()?;
            Ok(cfg)
        }
        None => Ok(RingConfig::default()),
    }
}

fn write_ring(path: &Path, results: &[RingResult]) -> Result<(), Failure> {
    let header = ["seed", "far_width", "center_width", "buffer_width", "f_prime_hash_before", "f_prime_hash_after"];
    write_csv(path, &header, results.iter())?;
    Ok(())
}

fn width_demo(common: &Common) -> Result<(), Failure> {
    let cfg = ring_config(common)?;
    let seed = common.seed.unwrap_or(0);
    let mut rows: Vec<WidthTrainRow> = Vec::new();
    let result = run_ring(&cfg, seed, &mut |r| rows.push(*r))?;
    fs::create_dir_all(&common.out)?;
    write_csv(&common.out.join("width_train.csv"), &["iter", "loss", "mean_buffer_width", "mean_query_width"], rows.iter())?;
    write_ring(&common.out.join("ring.csv"), std::slice::from_ref(&result))?;
    println!(
        "width: far {:.4}, center {:.4}, buffer {:.4} (far/buffer {:.2}); f' hash unchanged: {}",
        result.far_width,
        result.center_width,
        result.buffer_width,
        result.far_ratio(),
        result.f_prime_hash_before == result.f_prime_hash_after
    );
    Ok(())
}

fn bench(common: &Common, extended: bool, experiment: bool) -> Result<(), Failure> {
    let out = &common.out;
    let mut failures = Vec::new();

    let cfg = load_run(common, LOCK_CONFIG)?;
    if let Some(mdp) = cfg.env.tabular()? {
        let v_star = optimal_q_dp(&mdp, &env_reward(&mdp), 1e-10)?.v[mdp.start()];
        let eniac = run_experiment(&cfg, &out.join("lock").join("eniac"))?;
        let zero = run_experiment(&RunConfig { algorithm: AlgorithmId::ZeroBonus, ..cfg.clone() }, &out.join("lock").join("zero_bonus"))?;
        let (e, z) = (eniac.median_final() / v_star, zero.median_final() / v_star);
        let ok = e >= 0.9 && z < 0.5;
        println!("lock separation: {} eniac {e:.3} V*, zero-bonus {z:.3} V*", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures.push("lock separation");
        }
    } else {
        return Err(Failure::Config("bench expects a tabular environment config; use --extended for mountain car".into()));
    }

    let ring = RingConfig::default();
    let mut results = Vec::new();
    for seed in 0..5 {
        info!("ring seed {seed}");
        results.push(run_ring(&ring, seed, &mut |_| {})?);
    }
    fs::create_dir_all(out.join("ring"))?;
    write_ring(&out.join("ring").join("ring.csv"), &results)?;
    let ratio = median(results.iter().map(|r| r.far_ratio()).collect());
    let hashes = results.iter().all(|r| r.f_prime_hash_before == r.f_prime_hash_after);
    let ok = ratio >= 3.0 && hashes;
    println!("ring width: {} median far/buffer ratio {ratio:.3}, f' hash unchanged: {hashes}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        failures.push("ring width");
    }

    if extended || experiment {
        let mc = RunConfig::from_toml(MOUNTAIN_CAR_CONFIG)?;
        let seeds = run_ppo_experiment(&mc, &out.join("mountain_car"))?;
        let wins = seeds.iter().filter(|s| s.succeeded).count();
        let ok = wins >= mc.acceptance.min_successes;
        println!("mountain car: {} {wins}/{} seeds above {}", if ok { "PASS" } else { "FAIL" }, seeds.len(), mc.experiment.stop_threshold);
        if !ok {
            failures.push("mountain car");
        }
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Acceptance(format!("failed: {}", failures.join(", "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, experiment } => train(common, *experiment),
        Command::Eval { common, policy, episodes } => eval(common, policy, *episodes),
        Command::Bench { common, extended, experiment } => bench(common, *extended, *experiment),
        Command::WidthDemo { common } => width_demo(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Acceptance(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
