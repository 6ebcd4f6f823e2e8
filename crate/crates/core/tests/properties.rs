use grpol_core::advantage::group_advantages;
use grpol_core::env::{answer_probability, grad_logprob, in_band_fraction, sample_completion, sample_query_pool, trajectory_logprob};
use grpol_core::pipeline::process_batch;
use grpol_core::reward::{assign_group_rewards, length_penalty_reward};
use grpol_core::selector::efficiency_quota;
use grpol_core::{
    select_top_lambda, Batch, Completion, EnvConfig, Group, PolicyParams, RewardConfig, RewardMode, ToyQuery,
};
use grpol_core::Strategy as Label;
use proptest::prelude::*;

fn group_strategy(max_m: usize) -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((1usize..=256, any::<bool>()), 1..=max_m)
}

fn build(id: String, spec: &[(usize, bool)]) -> Group {
    Group::new(id, spec.iter().map(|&(l, c)| Completion::offline(l, c)).collect())
}

fn batch_strategy() -> impl Strategy<Value = Vec<Vec<(usize, bool)>>> {
    (1usize..=12, 1usize..=24).prop_flat_map(|(m, k)| {
        prop::collection::vec(prop::collection::vec((1usize..=256, any::<bool>()), m), k)
    })
}

fn batch_from(spec: &[Vec<(usize, bool)>]) -> Batch {
    Batch::new(spec.iter().enumerate().map(|(i, g)| build(format!("q{i:02}"), g)).collect())
}

fn rewards(batch: &Batch) -> Vec<u64> {
    batch
        .groups
        .iter()
        .flat_map(|g| g.completions.iter().map(|c| c.reward.unwrap().to_bits()))
        .collect()
}

fn advantages(batch: &Batch) -> Vec<u64> {
    batch
        .groups
        .iter()
        .flat_map(|g| g.completions.iter().map(|c| c.advantage.unwrap().to_bits()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn length_penalty_bounds_and_monotonicity(spec in group_strategy(32), alpha in 0.01f64..=1.0) {
        prop_assume!(spec.iter().any(|&(_, c)| c));
        let mut g = build("g".into(), &spec);
        g.strategy = Some(Label::EfficiencyPriority);
        let cfg = RewardConfig { alpha, ..RewardConfig::default() };
        assign_group_rewards(&mut g, &cfg).unwrap();
        for a in &g.completions {
            let r = a.reward.unwrap();
            if a.correct {
                prop_assert!(r > 1.0 - alpha && r < 1.0);
            } else {
                prop_assert_eq!(r, 0.0);
            }
            for b in &g.completions {
                if a.correct && b.correct && a.length < b.length {
                    prop_assert!(a.reward.unwrap() > b.reward.unwrap());
                }
            }
        }
    }

    #[test]
    fn equal_lengths_get_the_midpoint(n in 1usize..20, len in 1usize..500, wrong in 0usize..5) {
        let spec: Vec<(usize, bool)> = (0..n).map(|_| (len, true)).chain((0..wrong).map(|_| (len + 1, false))).collect();
        let mut g = build("g".into(), &spec);
        g.strategy = Some(Label::EfficiencyPriority);
        assign_group_rewards(&mut g, &RewardConfig::default()).unwrap();
        for c in g.completions.iter().filter(|c| c.correct) {
            prop_assert_eq!(c.reward, Some(1.0 - 0.2 / 2.0));
        }
    }

    #[test]
    fn penalty_never_beats_outcome(len in 0usize..1000, mean in 0.0f64..1000.0, std in 0.0f64..300.0) {
        let c = Completion::offline(len, true);
        prop_assert!(length_penalty_reward(&c, mean, std, 0.2) <= grpol_core::reward::outcome_reward(&c));
    }

    #[test]
    fn selection_cardinality_order_and_permutation(spec in batch_strategy(), lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let cfg = RewardConfig { lambda_frac: lambda, ..RewardConfig::default() };
        let mut batch = batch_from(&spec);
        select_top_lambda(&mut batch, &cfg).unwrap();
        let k = spec.len();
        let picked: Vec<&Group> = batch.groups.iter().filter(|g| g.strategy == Some(Label::EfficiencyPriority)).collect();
        prop_assert_eq!(picked.len(), efficiency_quota(lambda, k));
        let min_sel = picked.iter().map(|g| g.correctness_ratio.unwrap()).fold(f64::INFINITY, f64::min);
        let max_rest = batch.groups.iter()
            .filter(|g| g.strategy == Some(Label::AccuracyPriority))
            .map(|g| g.correctness_ratio.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_sel >= max_rest);

        let mut ids: Vec<String> = picked.iter().map(|g| g.query_id.to_string()).collect();
        ids.sort();
        let mut order: Vec<usize> = (0..k).collect();
        // Deterministic shuffle driven by the generated seed.
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let mut shuffled = Batch::new(order.iter().map(|&i| batch_from(&spec).groups[i].clone()).collect());
        select_top_lambda(&mut shuffled, &cfg).unwrap();
        let mut again: Vec<String> = shuffled.groups.iter()
            .filter(|g| g.strategy == Some(Label::EfficiencyPriority))
            .map(|g| g.query_id.to_string())
            .collect();
        again.sort();
        prop_assert_eq!(ids, again);
    }

    #[test]
    fn lambda_extremes_match_the_baselines(spec in batch_strategy()) {
        let run = |mode, lambda_frac| {
            let mut b = batch_from(&spec);
            process_batch(&mut b, &RewardConfig { mode, lambda_frac, ..RewardConfig::default() }).unwrap();
            b
        };
        let zero = run(RewardMode::GrpoLambda, 0.0);
        let pure = run(RewardMode::PureGrpo, 0.7);
        prop_assert_eq!(rewards(&zero), rewards(&pure));
        prop_assert_eq!(advantages(&zero), advantages(&pure));
        let one = run(RewardMode::GrpoLambda, 1.0);
        let all = run(RewardMode::AllGroupsLengthPenalty, 0.0);
        prop_assert_eq!(rewards(&one), rewards(&all));
        prop_assert_eq!(advantages(&one), advantages(&all));
    }

    #[test]
    fn advantages_are_standardized(spec in group_strategy(16), efficient in any::<bool>()) {
        let mut g = build("g".into(), &spec);
        let efficient = efficient && g.num_correct() > 0;
        g.strategy = Some(if efficient { Label::EfficiencyPriority } else { Label::AccuracyPriority });
        assign_group_rewards(&mut g, &RewardConfig::default()).unwrap();
        let adv = group_advantages(&mut g).unwrap().per_completion;
        let r: Vec<f64> = g.completions.iter().map(|c| c.reward.unwrap()).collect();
        let n = r.len() as f64;
        if r.iter().all(|&x| x == r[0]) {
            prop_assert!(adv.iter().all(|&a| a == 0.0));
        } else {
            let mean = adv.iter().sum::<f64>() / n;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!((std - 1.0).abs() <= 1e-6);
            for i in 0..r.len() {
                for j in 0..r.len() {
                    if r[i] < r[j] {
                        prop_assert!(adv[i] < adv[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_differences(
        stop in -4.0f64..2.0,
        base in -3.0f64..3.0,
        per_step in 0.0f64..1.0,
        difficulty in -2.0f64..10.0,
        max_len in prop::sample::select(vec![4usize, 32, 256]),
        seed in any::<u64>(),
    ) {
        let params = PolicyParams { stop_logit: stop, skill_base: base, skill_per_step: per_step };
        let env = EnvConfig { max_len, ..EnvConfig::default() };
        let q = ToyQuery { query_id: "q".into(), difficulty };
        let c = sample_completion(&params, &q, &env, seed);
        let g = grad_logprob(&params, &c, &q, &env).unwrap().to_array();
        let h = 1e-5;
        for i in 0..3 {
            let (mut hi, mut lo) = (params.to_array(), params.to_array());
            hi[i] += h;
            lo[i] -= h;
            let f = |p| trajectory_logprob(&PolicyParams::from_array(p), &c, &q, &env).unwrap();
            let fd = (f(hi) - f(lo)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(fd.abs()).max(1e-3));
        }
    }

    #[test]
    fn accuracy_rises_with_thinking_until_the_cap(
        per_step in 0.01f64..1.0,
        difficulty in -5.0f64..10.0,
        cap in 1usize..64,
        a in 0usize..128,
        b in 0usize..128,
    ) {
        let params = PolicyParams { skill_per_step: per_step, ..PolicyParams::default() };
        let env = EnvConfig { skill_cap: cap, ..EnvConfig::default() };
        let q = ToyQuery { query_id: "q".into(), difficulty };
        let (lo, hi) = (a.min(b), a.max(b));
        let (p_lo, p_hi) = (answer_probability(&params, &q, lo, &env), answer_probability(&params, &q, hi, &env));
        if lo >= cap {
            prop_assert_eq!(p_lo, p_hi);
        } else if lo < hi {
            prop_assert!(p_hi >= p_lo);
            prop_assert!(p_hi > p_lo || p_hi == 1.0);
        }
    }
}

#[test]
fn default_pool_is_calibrated() {
    let env = EnvConfig::default();
    let init = PolicyParams::default();
    let pool = sample_query_pool(&env, env.pool_size, 0);
    let band = in_band_fraction(&init, &env, &pool, 8, (2, 6), 1);
    assert!(band >= 0.7, "only {band:.3} of queries answered correctly 2-6 times out of 8");
}

#[test]
fn stop_logit_controls_length() {
    let env = EnvConfig::default();
    let q = ToyQuery { query_id: "q".into(), difficulty: 3.0 };
    let mean_len = |stop_logit: f64| {
        let p = PolicyParams { stop_logit, ..PolicyParams::default() };
        (0..4000u64).map(|s| sample_completion(&p, &q, &env, s).length as f64).sum::<f64>() / 4000.0
    };
    let lens: Vec<f64> = [-4.0, -2.75, -1.0, 1.0].iter().map(|&s| mean_len(s)).collect();
    assert!(lens.windows(2).all(|w| w[0] > w[1]), "{lens:?}");
}
