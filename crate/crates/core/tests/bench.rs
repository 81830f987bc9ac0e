use std::fs;
use std::path::Path;
use std::process::Command;

use eniac::bench::envs::{lock_combination, make_combination_lock, make_gridworld, McState, MountainCarConfig, MountainCarEnv};
use eniac::bench::{evaluate_policy, markov_policy, run_experiment, AlgorithmId, RunConfig};
use eniac::mdp::{
    env_reward, estimate_v, exact_value_dp, optimal_q_dp, Mdp, MixturePolicy, Policy, TabularMdp, TabularPolicy,
    UniformPolicy,
};
use eniac::rng::seeded;

const TINY_LOCK: &str = r#"
algorithm = "eniac"
seeds = [0]

[env]
kind = "combination_lock"
horizon = 3
delta = 0.01
gamma = 0.9
actions = 2

[eniac]
epochs = 3
rollouts = 30
eval_every = 1
parallel = false

[eniac.update]
iterations = 10
samples = 30
eta = 0.5
parallel = false
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eniac"));
    c.env_remove("ENIAC_OUT_DIR");
    c
}

/// Plain value iteration over the transition tensor, written against the
/// raw accessors only.
fn hand_v_star(mdp: &TabularMdp) -> Vec<f64> {
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    for _ in 0..2000 {
        v = (0..n)
            .map(|s| {
                (0..mdp.num_actions())
                    .map(|a| {
                        let next: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                        mdp.rewards()[s][a] + mdp.gamma() * next
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    v
}

#[test]
fn two_cell_lock_optimum() {
    let mdp = make_combination_lock(2, 0.0, 0.5, 2, 0).unwrap();
    let dp = optimal_q_dp(&mdp, &env_reward(&mdp), 1e-12).unwrap().v[0];
    let hand = hand_v_star(&mdp)[0];
    assert!((dp - hand).abs() < 1e-9);
    // zero on the first step, then 1 forever from the absorbing cell
    assert!((dp - 1.0).abs() < 1e-9);
}

#[test]
fn lock_decoy_path_is_worthless_without_delta() {
    let h = 6;
    let mdp = make_combination_lock(h, 0.0, 0.9, 2, 3).unwrap();
    let combo = lock_combination(h, 2, 3);
    let mut wrong: Vec<usize> = combo.iter().map(|a| 1 - a).collect();
    wrong.resize(mdp.num_states(), 0);
    let v = exact_value_dp(&mdp, &TabularPolicy::deterministic(&wrong, 2), &env_reward(&mdp), 0, 1e-12).unwrap();
    assert_eq!(v, 0.0);
    let mut right = combo.clone();
    right.resize(mdp.num_states(), 0);
    let v_right = exact_value_dp(&mdp, &TabularPolicy::deterministic(&right, 2), &env_reward(&mdp), 0, 1e-12).unwrap();
    let v_star = optimal_q_dp(&mdp, &env_reward(&mdp), 1e-12).unwrap().v[0];
    assert!((v_right - v_star).abs() < 1e-9);
    assert!((v_star - 0.9f64.powi(h as i32 - 1) / 0.1).abs() < 1e-8);
}

#[test]
fn registered_tabular_envs_have_stochastic_rows() {
    let envs = [
        make_combination_lock(15, 0.01, 0.97, 2, 0).unwrap(),
        make_combination_lock(5, 0.1, 0.9, 4, 7).unwrap(),
        make_gridworld(5, 5, 0.1, 0.95).unwrap(),
        make_gridworld(3, 2, 1.0, 0.5).unwrap(),
    ];
    for mdp in &envs {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let row = mdp.transition(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!((0.0..=1.0).contains(&mdp.rewards()[s][a]));
            }
        }
    }
    assert!(make_combination_lock(1, 0.0, 0.9, 2, 0).is_err());
    assert!(make_combination_lock(4, 0.5, 0.9, 2, 0).is_err());
}

/// Classic continuous mountain-car update, coded from the published
/// constants.
fn reference_step(p: f64, v: f64, force: f64) -> (f64, f64) {
    let mut v = v + force.clamp(-1.0, 1.0) * 0.0015 - 0.0025 * (3.0 * p).cos();
    v = v.clamp(-0.07, 0.07);
    let mut p = p + v;
    p = p.clamp(-1.2, 0.6);
    if p == -1.2 && v < 0.0 {
        v = 0.0;
    }
    (p, v)
}

#[test]
fn mountain_car_dynamics_match_reference() {
    let env = MountainCarEnv::new(MountainCarConfig::default()).unwrap();
    let mut rng = seeded(0);
    for a in 0..env.num_actions() {
        for start in [-0.5, -1.1, 0.3] {
            let mut s = McState { position: start, velocity: 0.0, t: 0, done: false };
            let (mut p, mut v) = (start, 0.0);
            for _ in 0..10 {
                s = env.step(&s, a, &mut rng);
                (p, v) = reference_step(p, v, env.force(a));
                if s.done {
                    break;
                }
                assert!((s.position - p).abs() < 1e-9 && (s.velocity - v).abs() < 1e-9);
            }
        }
    }
}

struct Constant(usize, usize);

impl Policy<McState> for Constant {
    fn action_probabilities(&self, _s: &McState) -> Vec<f64> {
        let mut p = vec![0.0; self.1];
        p[self.0] = 1.0;
        p
    }
}

/// Push in the direction of motion.
struct Pump {
    left: usize,
    right: usize,
    n: usize,
}

impl Policy<McState> for Pump {
    fn action_probabilities(&self, s: &McState) -> Vec<f64> {
        let mut p = vec![0.0; self.n];
        p[if s.velocity < 0.0 { self.left } else { self.right }] = 1.0;
        p
    }
}

#[test]
fn idling_in_the_basin_never_pays() {
    let env = MountainCarEnv::new(MountainCarConfig::default()).unwrap();
    let idle = Constant(env.idle_action(), env.num_actions());
    let mut rng = seeded(1);
    for _ in 0..50 {
        let (ret, steps) = eniac::bench::envs::episode_return(&env, &idle, &mut rng);
        assert!(ret <= 0.0);
        assert_eq!(steps, 100);
    }
}

#[test]
fn reaching_the_goal_pays_the_large_reward() {
    let cfg = MountainCarConfig { horizon: 400, ..MountainCarConfig::default() };
    let env = MountainCarEnv::new(cfg.clone()).unwrap();
    let pump = Pump { left: 0, right: env.num_actions() - 1, n: env.num_actions() };
    let mut rng = seeded(2);
    for _ in 0..10 {
        let (ret, steps) = eniac::bench::envs::episode_return(&env, &pump, &mut rng);
        assert!(steps < cfg.horizon, "goal not reached");
        assert!(ret >= cfg.goal_reward - cfg.action_cost * steps as f64 - 1e-9);
    }
}

fn chain(gamma: f64) -> TabularMdp {
    let next = vec![vec![0, 1], vec![0, 2], vec![1, 2]];
    let rewards = vec![vec![0.1, 0.0], vec![0.0, 0.2], vec![0.5, 1.0]];
    TabularMdp::deterministic(&next, rewards, gamma, 0).unwrap()
}

#[test]
fn evaluation_matches_dp() {
    let mdp = chain(0.8);
    let reward = env_reward(&mdp);
    let pi = TabularPolicy { probs: vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1]] };
    let est = evaluate_policy(&mdp, &pi, 20_000, &mut seeded(3)).unwrap();
    let exact = exact_value_dp(&mdp, &pi, &reward, 0, 1e-12).unwrap();
    assert!((est - exact).abs() < 0.05, "{est} vs {exact}");

    let a = std::sync::Arc::new(TabularPolicy::deterministic(&[1, 1, 1], 2));
    let b = std::sync::Arc::new(TabularPolicy::deterministic(&[0, 0, 0], 2));
    let mix = MixturePolicy::new(vec![a.clone(), b.clone()]);
    let est = evaluate_policy(&mdp, &mix, 20_000, &mut seeded(4)).unwrap();
    let mean = 0.5
        * (exact_value_dp(&mdp, a.as_ref(), &reward, 0, 1e-12).unwrap()
            + exact_value_dp(&mdp, b.as_ref(), &reward, 0, 1e-12).unwrap());
    assert!((est - mean).abs() < 0.05, "{est} vs {mean}");
}

#[test]
fn evaluation_of_zero_reward_is_zero() {
    let next = vec![vec![0, 1], vec![1, 0]];
    let mdp = TabularMdp::deterministic(&next, vec![vec![0.0; 2]; 2], 0.9, 0).unwrap();
    assert_eq!(evaluate_policy(&mdp, &UniformPolicy { num_actions: 2 }, 100, &mut seeded(0)).unwrap(), 0.0);
    assert!(evaluate_policy(&mdp, &UniformPolicy { num_actions: 2 }, 0, &mut seeded(0)).is_err());
}

#[test]
fn markov_policy_preserves_mixture_value() {
    let mdp = chain(0.8);
    let reward = env_reward(&mdp);
    let a = std::sync::Arc::new(TabularPolicy::deterministic(&[1, 1, 1], 2));
    let b = std::sync::Arc::new(TabularPolicy { probs: vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.8]] });
    let mix = MixturePolicy::new(vec![a, b]);
    let flat = markov_policy(&mdp, &mix).unwrap();
    let v_mix = exact_value_dp(&mdp, &mix, &reward, 0, 1e-12).unwrap();
    let v_flat = exact_value_dp(&mdp, &flat, &reward, 0, 1e-12).unwrap();
    assert!((v_mix - v_flat).abs() < 1e-8);

    let json = serde_json::to_string(&flat).unwrap();
    let back: TabularPolicy = serde_json::from_str(&json).unwrap();
    assert_eq!(back, flat);
    assert_eq!(estimate_v(&mdp, &back, &0, &reward, &mut seeded(1)), estimate_v(&mdp, &flat, &0, &reward, &mut seeded(1)));
}

#[test]
fn experiment_csvs_replay_byte_for_byte() {
    let cfg = RunConfig::from_toml(TINY_LOCK).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, d1.path()).unwrap();
    run_experiment(&cfg, d2.path()).unwrap();
    for f in ["metrics.csv", "epochs.csv", "manifest.toml", "policy_seed0.json"] {
        assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f} differs");
    }
    let header = fs::read_to_string(d1.path().join("metrics.csv")).unwrap();
    assert!(header.starts_with("episode,env_steps,mean_return,epochs_used,seed\n"));
}

fn rollouts_column(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join("epochs.csv")).unwrap();
    text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
}

#[test]
fn baselines_consume_the_same_budget() {
    let cfg = RunConfig::from_toml(TINY_LOCK).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, d1.path()).unwrap();
    run_experiment(&RunConfig { algorithm: AlgorithmId::ZeroBonus, ..cfg }, d2.path()).unwrap();
    let (a, b) = (rollouts_column(d1.path()), rollouts_column(d2.path()));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
}

#[test]
fn out_of_scope_baselines_error() {
    for id in ["ppo-rnd", "pc-pg"] {
        let text = TINY_LOCK.replace("algorithm = \"eniac\"", &format!("algorithm = \"{id}\""));
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("out of scope"), "{err}");
    }
}

#[test]
fn cli_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lock.toml");
    fs::write(&cfg, TINY_LOCK).unwrap();
    let out = dir.path().join("run");
    let status = bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("metrics.csv").exists());

    let eval = bin()
        .args(["eval", "--episodes", "200", "--config"])
        .arg(&cfg)
        .arg("--policy")
        .arg(out.join("policy_seed0.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.starts_with("exact_value,mc_value,episodes,optimum\n"));
}

#[test]
fn cli_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lock.toml");
    fs::write(&cfg, TINY_LOCK).unwrap();
    let out = dir.path().join("from_env");
    let status = bin().env("ENIAC_OUT_DIR", &out).args(["train", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("epochs.csv").exists());
}

#[test]
fn cli_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, format!("{TINY_LOCK}\nnot_a_key = 1\n")).unwrap();
    let invalid = dir.path().join("invalid.toml");
    fs::write(&invalid, TINY_LOCK.replace("epochs = 3", "epochs = 0")).unwrap();
    let garbage = dir.path().join("garbage.toml");
    fs::write(&garbage, "[[[").unwrap();
    for path in [&unknown, &invalid, &garbage] {
        let out = bin().args(["train", "--config"]).arg(path).arg("--out").arg(dir.path()).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn cli_failed_acceptance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    // no policy reaches more than the optimum
    fs::write(&cfg, format!("{TINY_LOCK}\n[acceptance]\noptimum_fraction = 1.5\nmin_successes = 1\n")).unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stop_rule_ends_the_metrics_stream() {
    let text = format!("{TINY_LOCK}\n[acceptance]\noptimum_fraction = 0.3\nstop = true\n");
    let text = text.replace("epochs = 3", "epochs = 8");
    let cfg = RunConfig::from_toml(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, dir.path()).unwrap();
    let threshold = summary.threshold.unwrap();
    let csv = fs::read_to_string(&summary.metrics_path).unwrap();
    let returns: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let first = returns.iter().position(|r| *r >= threshold).expect("threshold reached");
    assert_eq!(first, returns.len() - 1, "rows after the stop: {returns:?}");
    assert!(summary.seeds[0].stopped_early);
}
