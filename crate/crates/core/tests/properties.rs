use std::sync::Arc;

use proptest::prelude::*;

use eniac::function_class::mlp::{clip_global_norm, Mlp};
use eniac::function_class::{
    softmax, softmax_policy, tangent_features_all, FiniteClass, FunctionClass, LinearClass, Sample, TabularClass,
};
use eniac::linalg::{ball_constrained_lstsq, norm};
use eniac::mdp::{
    env_reward, estimate_q, exact_value_dp, start_occupancy, Mdp, MixturePolicy, Policy, TabularMdp, TabularPolicy,
};
use eniac::neural_width::{normalized_bonus, width_loss, WidthNetPair};
use eniac::rng::seeded;
use eniac::width::{bonus, width_finite, width_linear, BonusSpec, Dataset, FiniteWidth, LinearWidth, TabularWidth, WidthOracle};

fn dataset(pairs: &[(usize, usize)]) -> Dataset<usize> {
    Dataset::from_pairs(pairs.to_vec())
}

/// A finite class over `ns x na` cells plus a dataset and a query cell.
fn finite_instance() -> impl Strategy<Value = (usize, usize, Vec<Vec<f64>>, Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    (1usize..4, 1usize..4, 1usize..6).prop_flat_map(|(ns, na, k)| {
        let cell = (0..ns, 0..na);
        (
            Just(ns),
            Just(na),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, ns * na), k),
            prop::collection::vec(cell.clone(), 0..6),
            prop::collection::vec(cell, 1..4),
        )
    })
}

fn unit_features(dim: usize) -> impl Fn(&Vec<f64>, usize) -> Vec<f64> {
    move |x: &Vec<f64>, _| x[..dim].to_vec()
}

fn vectors(dim: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n)
}

fn random_mdp() -> impl Strategy<Value = TabularMdp> {
    (1usize..4, 1usize..4, 0.3f64..0.9).prop_flat_map(|(ns, na, gamma)| {
        (
            prop::collection::vec(prop::collection::vec(prop::collection::vec(0.01f64..1.0, ns), na), ns),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, na), ns),
        )
            .prop_map(move |(raw, rewards)| {
                let p = raw
                    .into_iter()
                    .map(|rows| {
                        rows.into_iter()
                            .map(|row| {
                                let z: f64 = row.iter().sum();
                                row.iter().map(|x| x / z).collect()
                            })
                            .collect()
                    })
                    .collect();
                TabularMdp::new(p, rewards, gamma, 0).unwrap()
            })
    })
}

fn random_policy(ns: usize, na: usize) -> impl Strategy<Value = TabularPolicy> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, na), ns).prop_map(|rows| TabularPolicy {
        probs: rows
            .into_iter()
            .map(|r| {
                let z: f64 = r.iter().sum();
                r.iter().map(|x| x / z).collect()
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_normalized_and_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..8),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_width_invariants((ns, na, tables, z, extra) in finite_instance(), eps in 0.0f64..2.0, grow in 0.0f64..1.0) {
        let class = FiniteClass::with_uniform(ns, na, tables).unwrap();
        let small = dataset(&z);
        let mut big_pairs = z.clone();
        big_pairs.extend(&extra);
        let big = dataset(&big_pairs);
        for s in 0..ns {
            for a in 0..na {
                let w = width_finite(&class, &small, eps, s, a);
                prop_assert!(w >= 0.0);
                prop_assert!(width_finite(&class, &big, eps, s, a) <= w + 1e-9);
                prop_assert!(width_finite(&class, &small, eps + grow, s, a) >= w - 1e-9);
            }
        }
        for &(s, a) in &big_pairs {
            prop_assert!(width_finite(&class, &big, eps, s, a) <= eps + 1e-9);
        }
    }

    #[test]
    fn incremental_finite_oracle_matches_one_shot((ns, na, tables, z, extra) in finite_instance(), eps in 0.0f64..2.0) {
        let class = FiniteClass::with_uniform(ns, na, tables).unwrap();
        let mut oracle = FiniteWidth::from_class(&class, eps);
        let mut seen = Vec::new();
        for (s, a) in z.iter().chain(&extra) {
            oracle.push(s, *a);
            seen.push((*s, *a));
            let frozen = oracle.snapshot();
            for qs in 0..ns {
                for qa in 0..na {
                    let want = width_finite(&class, &dataset(&seen), eps, qs, qa);
                    prop_assert!((oracle.width(&qs, qa) - want).abs() < 1e-12);
                    prop_assert!((frozen(&qs, qa) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_width_invariants(
        z in vectors(3, 0..6),
        extra in vectors(3, 1..4),
        queries in vectors(3, 1..4),
        eps in 0.01f64..1.0,
        bound in 0.5f64..3.0,
        lambda in prop_oneof![Just(0.0), 1e-4f64..1.0],
    ) {
        let phi = unit_features(3);
        let small = Dataset::from_pairs(z.iter().map(|x| (x.clone(), 0)).collect());
        let mut big = small.clone();
        big.extend(extra.iter().map(|x| (x.clone(), 0)));
        for q in queries.iter().chain(&z) {
            let w = width_linear(&phi, 3, bound, &small, eps, lambda, q, 0);
            prop_assert!(w >= 0.0);
            prop_assert!(w <= 2.0 * bound * norm(q) + 1e-9);
            prop_assert!(width_linear(&phi, 3, bound, &big, eps, lambda, q, 0) <= w + 1e-9);
            prop_assert!(width_linear(&phi, 3, bound, &small, eps * 1.5, lambda, q, 0) >= w - 1e-9);
        }
        if lambda == 0.0 {
            for (x, _) in big.iter() {
                prop_assert!(width_linear(&phi, 3, bound, &big, eps, 0.0, x, 0) <= eps + 1e-7);
            }
        }
    }

    #[test]
    fn incremental_linear_oracle_matches_one_shot(
        z in vectors(2, 1..8),
        queries in vectors(2, 1..4),
        eps in 0.01f64..1.0,
        lambda in 1e-4f64..1.0,
    ) {
        let feats: Arc<dyn Fn(&Vec<f64>, usize) -> Vec<f64> + Send + Sync> = Arc::new(unit_features(2));
        let mut oracle = LinearWidth::new(feats.clone(), 2, 1.0, eps, Some(lambda));
        let mut seen = Dataset::new();
        for x in &z {
            oracle.push(x, 0);
            seen.push(x.clone(), 0);
        }
        for q in &queries {
            let want = width_linear(feats.as_ref(), 2, 1.0, &seen, eps, lambda, q, 0);
            prop_assert!((oracle.width(q, 0) - want).abs() < 1e-8 * (1.0 + want));
        }
    }

    #[test]
    fn tabular_width_shrinks_with_visits(visits in prop::collection::vec((0usize..3, 0usize..2), 0..40), eps in 0.01f64..2.0) {
        let mut oracle = TabularWidth::new(3, 2, 4.0, eps);
        let mut prev = vec![f64::INFINITY; 6];
        let mut counts = [0u64; 6];
        for (s, a) in visits {
            oracle.push(&s, a);
            counts[s * 2 + a] += 1;
            for c in 0..6 {
                let w = oracle.width(&(c / 2), c % 2);
                let expected = if counts[c] == 0 { 8.0 } else { (eps / (counts[c] as f64).sqrt()).min(8.0) };
                prop_assert!((w - expected).abs() < 1e-12);
                prop_assert!(w <= prev[c] + 1e-12);
                prev[c] = w;
            }
        }
    }

    #[test]
    fn score_features_have_zero_mean(
        theta in prop::collection::vec(-3.0f64..3.0, 6),
        s in 0usize..2,
    ) {
        let class = LinearClass::one_hot(2, 3, 10.0);
        let feats = tangent_features_all(&class, &theta, &s);
        let probs = softmax_policy(&class, &theta, &s);
        for k in 0..6 {
            let m: f64 = feats.iter().zip(&probs).map(|(g, p)| p * g[k]).sum();
            prop_assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn constrained_lstsq_is_feasible_and_optimal(
        rows in vectors(3, 1..10),
        targets_seed in any::<u64>(),
        bound in 0.1f64..5.0,
        candidates in vectors(3, 100..101),
    ) {
        use rand::Rng as _;
        let mut rng = seeded(targets_seed);
        let y: Vec<f64> = rows.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let sol = ball_constrained_lstsq(&rows, &y, bound).unwrap();
        prop_assert!(norm(&sol.coefficients) <= bound + 1e-9);
        let loss = |u: &[f64]| {
            rows.iter().zip(&y).map(|(x, t)| (t - x.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()).powi(2)).sum::<f64>()
                / rows.len() as f64
        };
        prop_assert!((loss(&sol.coefficients) - sol.mean_squared_residual).abs() < 1e-9 * (1.0 + sol.mean_squared_residual));
        for c in &candidates {
            let mut u = c.clone();
            let n = norm(&u);
            if n > bound {
                u.iter_mut().for_each(|x| *x *= bound / n);
            }
            prop_assert!(sol.mean_squared_residual <= loss(&u) + 1e-7);
        }
    }

    #[test]
    fn tabular_fit_beats_random_candidates(
        samples in prop::collection::vec((0usize..3, 0usize..2, -5.0f64..5.0), 1..20),
        seed in any::<u64>(),
    ) {
        use rand::Rng as _;
        let class = TabularClass::new(3, 2, 4.0);
        let data: Vec<Sample<usize>> =
            samples.iter().map(|&(state, action, target)| Sample { state, action, target }).collect();
        let fit = class.fit(&data).unwrap();
        prop_assert!(fit.params.iter().all(|x| x.abs() <= 4.0 + 1e-12));
        let loss = |p: &[f64]| {
            data.iter().map(|d| (d.target - class.evaluate(p, &d.state, d.action)).powi(2)).sum::<f64>() / data.len() as f64
        };
        prop_assert!((loss(&fit.params) - fit.loss).abs() < 1e-9);
        let mut rng = seeded(seed);
        for _ in 0..100 {
            let cand: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            prop_assert!(fit.loss <= loss(&cand) + 1e-9);
        }
    }

    #[test]
    fn normalized_bonus_is_bounded(widths in prop::collection::vec(0.0f64..10.0, 1..20)) {
        let table = Arc::new(widths.clone());
        let w: eniac::width::WidthFn<usize> = Arc::new(move |s: &usize, _| table[*s]);
        let queries: Vec<(usize, usize)> = (0..widths.len()).map(|s| (s, 0)).collect();
        let b = normalized_bonus(w, &queries);
        let max = widths.iter().cloned().fold(0.0, f64::max);
        for (s, _) in &queries {
            let v = b(s, 0);
            prop_assert!((0.0..=0.5 + 1e-12).contains(&v));
            if max > 0.0 && widths[*s] == max {
                prop_assert!((v - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn threshold_bonus_takes_two_values(width in 0.0f64..5.0, beta in 0.01f64..5.0, gamma in 0.01f64..0.99) {
        let spec = BonusSpec::sample(beta, gamma, 3).unwrap();
        let b = bonus(width, &spec);
        prop_assert!(b == 0.0 || (b - 1.0 / (1.0 - gamma)).abs() < 1e-12);
        prop_assert_eq!(b > 0.0, width >= beta);
    }

    #[test]
    fn clipped_step_respects_limit(grad in prop::collection::vec(-100.0f64..100.0, 1..20), clip in 0.01f64..10.0, lr in 1e-4f64..0.1) {
        let mut g = grad.clone();
        let before = clip_global_norm(&mut g, clip);
        prop_assert!((before - norm(&grad)).abs() < 1e-9);
        prop_assert!(lr * norm(&g) <= lr * clip * (1.0 + 1e-12));
        // direction is preserved
        let dot: f64 = g.iter().zip(&grad).map(|(a, b)| a * b).sum();
        prop_assert!(dot >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn width_loss_decomposes(
        seed in any::<u64>(),
        dq in vectors(2, 1..6),
        dj in vectors(2, 1..6),
        lambda in 0.0f64..1.0,
        lambda1 in 0.0f64..0.1,
    ) {
        let net = Mlp::with_hidden(2, &[5], 1);
        let mut rng = seeded(seed);
        let f = net.init(&mut rng);
        let fp = net.init(&mut rng);
        let pair = WidthNetPair::from_params(net, f, fp).unwrap();
        let q: Vec<(Vec<f64>, usize)> = dq.into_iter().map(|x| (x, 0)).collect();
        let j: Vec<(Vec<f64>, usize)> = dj.into_iter().map(|x| (x, 0)).collect();
        let mean = |pts: &[(Vec<f64>, usize)], g: &dyn Fn(f64) -> f64| {
            pts.iter().map(|(x, h)| g(pair.diff(x, *h))).sum::<f64>() / pts.len() as f64
        };
        let stretch = lambda * mean(&q, &|d| d * d);
        let tie = mean(&j, &|d| d * d);
        let degeneracy = lambda1 * mean(&q, &|d| d);
        let terms = pair.loss_terms(&q, &j, lambda, lambda1);
        prop_assert!((terms.stretch - stretch).abs() < 1e-9);
        prop_assert!((terms.tie - tie).abs() < 1e-9);
        prop_assert!((terms.degeneracy - degeneracy).abs() < 1e-9);
        prop_assert!((width_loss(&pair, &q, &j, lambda, lambda1) - (stretch - tie - degeneracy)).abs() < 1e-9);
        if lambda == 0.0 && lambda1 == 0.0 {
            prop_assert!(width_loss(&pair, &q, &j, 0.0, 0.0) <= 0.0);
        }
        for (x, h) in &q {
            prop_assert!(pair.width(x, *h) >= 0.0);
        }
    }

    #[test]
    fn mlp_gradient_matches_differences(seed in any::<u64>(), x in prop::collection::vec(-1.0f64..1.0, 3)) {
        let net = Mlp::new(vec![3, 4, 2]);
        let p = net.init(&mut seeded(seed));
        for k in 0..2 {
            let (_, g) = net.output_gradient(&p, &x, k);
            let h = 1e-6;
            for i in 0..p.len() {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[i] += h;
                lo[i] -= h;
                let fd = (net.forward(&hi, &x)[k] - net.forward(&lo, &x)[k]) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-4 * (1.0 + fd.abs()), "param {}: {} vs {}", i, fd, g[i]);
            }
        }
    }

    #[test]
    fn mixture_value_is_mean_of_occupancy_values(
        (mdp, p1, p2) in random_mdp().prop_flat_map(|m| {
            let (ns, na) = (m.num_states(), m.num_actions());
            (Just(m), random_policy(ns, na), random_policy(ns, na))
        })
    ) {
        let reward = env_reward(&mdp);
        let mix = MixturePolicy::new(vec![Arc::new(p1.clone()) as Arc<dyn Policy<usize>>, Arc::new(p2.clone())]);
        // V = sum_{s,a} d(s,a) r(s,a) / (1 - gamma) for the normalised occupancy
        let by_occupancy = |pi: &dyn Policy<usize>| {
            let d = start_occupancy(&mdp, pi, 1e-13).unwrap();
            let mass: f64 = d.iter().flatten().sum();
            assert!((mass - 1.0).abs() < 1e-9);
            let r = mdp.rewards();
            let mut v = 0.0;
            for (s, row) in d.iter().enumerate() {
                for (a, x) in row.iter().enumerate() {
                    v += x * r[s][a];
                }
            }
            v / (1.0 - mdp.gamma())
        };
        let v_mix = exact_value_dp(&mdp, &mix, &reward, 0, 1e-12).unwrap();
        let mean = 0.5 * (by_occupancy(&p1) + by_occupancy(&p2));
        prop_assert!((v_mix - mean).abs() < 1e-7);
        prop_assert!(v_mix >= 0.0 && v_mix <= 1.0 / (1.0 - mdp.gamma()) + 1e-9);
    }

    #[test]
    fn estimator_draws_are_bounded(mdp in random_mdp(), seed in any::<u64>()) {
        let reward = env_reward(&mdp);
        let pi = eniac::mdp::UniformPolicy { num_actions: mdp.num_actions() };
        let cap = (50.0 / (1.0 - mdp.gamma())).ceil() + 1.0;
        let mut rng = seeded(seed);
        for _ in 0..200 {
            let q = estimate_q(&mdp, &pi, &0, 0, &reward, &mut rng);
            prop_assert!(q >= 0.0 && q <= cap);
        }
    }

    #[test]
    fn tabular_mdp_text_round_trip(mdp in random_mdp()) {
        let back = TabularMdp::from_toml(&mdp.to_toml()).unwrap();
        prop_assert_eq!(back.to_file(), mdp.to_file());
    }

    #[test]
    fn policy_json_round_trip(pi in random_policy(4, 3)) {
        let back: TabularPolicy = serde_json::from_str(&serde_json::to_string(&pi).unwrap()).unwrap();
        prop_assert_eq!(back, pi);
    }
}
