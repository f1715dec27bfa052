use std::collections::HashMap;

use proptest::prelude::*;

use lrs_core::bench::{aggregate, signed_rank_null_distribution, average_ranks, ResultRow, TimeBasis, TimeLimitRule};
use lrs_core::brkga::{
    biased_priorities, decode_biased, decode_standard, evolve_observed, priority_order, BrkgaConfig, DecoderMode,
    EvolveOptions,
};
use lrs_core::features::{build_feature_matrix, Metric, MetricSet};
use lrs_core::guidance::{
    build_bias, influence, parse_alpha_beta, sigmoid, AlphaBeta, CoefficientSource, ParseOptions,
};
use lrs_core::instance::{
    decompose_str, exact_solve_with, is_feasible, reconstruct, ExactMode, LrsInstance, Selection,
};
use lrs_core::llm::{build_prompt, validate_prompt, PromptOptions, PromptStyle};

fn text(max_len: usize, alphabet: &'static str) -> impl Strategy<Value = String> {
    let symbols: Vec<char> = alphabet.chars().collect();
    prop::collection::vec(prop::sample::select(symbols), 1..=max_len).prop_map(|v| v.into_iter().collect())
}

fn instance(max_len: usize, alphabet: &'static str) -> impl Strategy<Value = LrsInstance> {
    text(max_len, alphabet).prop_map(|s| LrsInstance::new("p", &s))
}

// Instance plus one key and one bias value per run.
fn instance_keys_bias() -> impl Strategy<Value = (LrsInstance, Vec<f64>, Vec<f64>)> {
    instance(80, "ABCDEFGH").prop_flat_map(|inst| {
        let m = inst.run_count();
        (Just(inst), prop::collection::vec(0.0..=1.0f64, m), prop::collection::vec(0.001..0.999f64, m))
    })
}

fn alpha_beta(k: usize) -> impl Strategy<Value = AlphaBeta> {
    (prop::collection::vec(0.05..1.0f64, k), prop::collection::vec(0.001..0.999f64, k)).prop_filter_map(
        "alphas must normalize into (0,1)",
        move |(raw, betas)| {
            let total: f64 = raw.iter().sum();
            let alphas: Vec<f64> = raw.iter().map(|a| a / total).collect();
            AlphaBeta::new(alphas, betas, CoefficientSource::Manual).ok()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decompose_round_trips(s in text(200, "ABCxyz")) {
        let runs = decompose_str(&s);
        prop_assert_eq!(reconstruct(&runs), s.clone());
        prop_assert_eq!(runs.iter().map(|r| r.length).sum::<usize>(), s.chars().count());
        let chars: Vec<char> = s.chars().collect();
        let changes = chars.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(runs.len(), 1 + changes);
    }

    #[test]
    fn decoders_feasible_and_prefix_closed((inst, keys, bias) in instance_keys_bias()) {
        let std = decode_standard(&keys, &inst).unwrap();
        let biased = decode_biased(&keys, &bias, &inst).unwrap();
        prop_assert!(is_feasible(&inst, &std.selected).unwrap());
        prop_assert!(is_feasible(&inst, &biased.selected).unwrap());

        // every prefix of the construction order is itself feasible
        let mut sel = Selection::new(&inst);
        let mut accepted = Vec::new();
        for i in priority_order(&biased_priorities(&keys, &bias)) {
            if sel.try_insert(i) {
                accepted.push(i);
                let mut prefix = accepted.clone();
                prefix.sort_unstable();
                prop_assert!(is_feasible(&inst, &prefix).unwrap());
            }
        }
        prop_assert_eq!(sel.score(), biased.score);
    }

    #[test]
    fn constant_bias_is_standard((inst, keys, _b) in instance_keys_bias(), c in 0.001..0.999f64) {
        let m = inst.run_count();
        prop_assert_eq!(priority_order(&biased_priorities(&keys, &vec![c; m])), priority_order(&keys));
        prop_assert_eq!(decode_biased(&keys, &vec![c; m], &inst).unwrap(), decode_standard(&keys, &inst).unwrap());
    }

    #[test]
    fn ordering_invariant_under_monotone_transform((_inst, keys, bias) in instance_keys_bias()) {
        let products = biased_priorities(&keys, &bias);
        let transformed: Vec<f64> = products.iter().map(|p| (3.0 * p + 0.25).sqrt()).collect();
        prop_assert_eq!(priority_order(&products), priority_order(&transformed));
    }

    #[test]
    fn exact_bounds_heuristics((inst, keys, bias) in instance(40, "ABCD").prop_flat_map(|inst| {
        let m = inst.run_count();
        (Just(inst), prop::collection::vec(0.0..=1.0f64, m), prop::collection::vec(0.001..0.999f64, m))
    })) {
        let dp = exact_solve_with(&inst, ExactMode::Dp).unwrap();
        prop_assert!(is_feasible(&inst, &dp.selected).unwrap());
        prop_assert!(dp.score >= inst.max_run_length() as u64);
        prop_assert!(dp.score >= decode_standard(&keys, &inst).unwrap().score);
        prop_assert!(dp.score >= decode_biased(&keys, &bias, &inst).unwrap().score);
        if inst.run_count() <= 16 {
            prop_assert_eq!(exact_solve_with(&inst, ExactMode::Enumeration).unwrap().score, dp.score);
        }
    }

    #[test]
    fn curated_metrics_in_unit_interval(inst in instance(300, "ABCDEFGHIJKLMNOP")) {
        for set in [MetricSet::curated(), MetricSet::simple2(), MetricSet::random4()] {
            let m = build_feature_matrix(&inst, &set).unwrap();
            prop_assert_eq!(m.row_count(), inst.run_count());
            for v in m.rows().iter().flatten() {
                prop_assert!((0.0..=1.0).contains(v), "{} out of range", v);
            }
            prop_assert_eq!(&m, &build_feature_matrix(&inst, &set).unwrap());
        }
    }

    #[test]
    fn curated_metrics_ignore_symbol_names(s in text(120, "ABCDE"), perm in Just("ABCDE".chars().collect::<Vec<_>>()).prop_shuffle()) {
        let map: HashMap<char, char> = "ABCDE".chars().zip(perm.iter().map(|c| c.to_ascii_lowercase())).collect();
        let relabeled: String = s.chars().map(|c| map[&c]).collect();
        let a = build_feature_matrix(&LrsInstance::new("a", &s), &MetricSet::curated()).unwrap();
        let b = build_feature_matrix(&LrsInstance::new("b", &relabeled), &MetricSet::curated()).unwrap();
        prop_assert_eq!(a.rows(), b.rows());
    }

    #[test]
    fn influence_bounded_and_monotone(ab in alpha_beta(4), row in prop::collection::vec(0.0..=1.0f64, 4), j in 0usize..4, bump in 0.001..0.5f64) {
        let out = influence(&row, &ab).unwrap();
        prop_assert!(out > sigmoid(-1.0) && out < sigmoid(2.0));
        let mut raised = row.clone();
        raised[j] = (raised[j] + bump).min(1.0);
        if raised[j] > row[j] {
            prop_assert!(influence(&raised, &ab).unwrap() > out);
        }
        let at_beta = influence(ab.betas(), &ab).unwrap();
        prop_assert!((at_beta - sigmoid(1.0)).abs() < 1e-12);
    }

    #[test]
    fn render_parse_round_trip(ab in (1usize..7).prop_flat_map(alpha_beta)) {
        let parsed = parse_alpha_beta(&ab.render(), ab.k(), ParseOptions::default()).unwrap();
        prop_assert_eq!(parsed.alphas(), ab.alphas());
        prop_assert_eq!(parsed.betas(), ab.betas());
    }

    #[test]
    fn bias_values_open_interval(inst in instance(200, "ABCDEFGH"), ab in alpha_beta(4)) {
        let matrix = build_feature_matrix(&inst, &MetricSet::curated()).unwrap();
        let bias = build_bias(&matrix, &ab).unwrap();
        prop_assert_eq!(bias.len(), inst.run_count());
        prop_assert!(bias.values().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn prompts_are_well_formed(inst in instance(300, "ABCDEFGHIJ"), verbatim in any::<bool>(), set_idx in 0usize..3) {
        let set = [MetricSet::curated(), MetricSet::simple2(), MetricSet::random4()][set_idx].clone();
        let matrix = build_feature_matrix(&inst, &set).unwrap();
        let style = if verbatim { PromptStyle::Verbatim } else { PromptStyle::Cleaned };
        let opts = PromptOptions { style, ..Default::default() };
        let p = build_prompt(&inst, &matrix, &opts).unwrap();
        prop_assert!(validate_prompt(&p.rendered, inst.run_count(), set.len()).is_ok());
        prop_assert_eq!(p, build_prompt(&inst, &matrix, &opts).unwrap());
    }

    #[test]
    fn aggregate_permutation_invariant(
        scores in prop::collection::vec((0u64..500, 0.0..100.0f64, 0usize..3, 0usize..2), 1..40),
        seed in any::<u64>(),
    ) {
        let rows: Vec<ResultRow> = scores.iter().enumerate().map(|(i, &(score, t, v, s))| ResultRow {
            instance: format!("i{i}"),
            n: 100,
            sigma: [2, 4][s],
            variant: ["baseline", "random_static", "llm(m)"][v].into(),
            score,
            time_to_best_s: t,
            runtime_s: t + 1.0,
            guidance: "none".into(),
            seed: 0,
        }).collect();
        let mut shuffled = rows.clone();
        // deterministic Fisher-Yates driven by `seed`
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(aggregate(&rows, TimeBasis::TimeToBest), aggregate(&shuffled, TimeBasis::TimeToBest));
        prop_assert_eq!(aggregate(&rows, TimeBasis::Runtime), aggregate(&shuffled, TimeBasis::Runtime));
    }

    #[test]
    fn signed_rank_distribution_sums_to_one(abs in prop::collection::vec(1u32..6, 1..=15)) {
        let values: Vec<f64> = abs.iter().map(|&a| f64::from(a)).collect();
        let dist = signed_rank_null_distribution(&average_ranks(&values));
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_rule_default(n in 1usize..100_000) {
        prop_assert_eq!(TimeLimitRule::default().seconds(n), n as f64 / 5.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolve_elitism_and_population(inst in instance(120, "ABCDEF"), seed in any::<u64>(), preset in prop::sample::select(vec!["baseline", "gpt41mini", "llama4maverick"]), dynamic in any::<bool>()) {
        let cfg = BrkgaConfig::preset(preset).unwrap().with_time_limit(60.0).with_seed(seed);
        let mode = if dynamic { DecoderMode::RandomDynamic { seed } } else { DecoderMode::Standard };
        let opts = EvolveOptions { max_generations: Some(15), ..Default::default() };
        let mut last = 0;
        let mut ok = true;
        let res = evolve_observed(&inst, &cfg, &mode, &opts, |r| {
            ok &= r.population.len() == cfg.population_size;
            ok &= r.elites + r.mutants + r.offspring == cfg.population_size;
            ok &= r.best_score >= last;
            last = r.best_score;
            for c in r.population {
                ok &= is_feasible(&inst, &c.solution.selected).unwrap();
            }
        }).unwrap();
        prop_assert!(ok);
        prop_assert!(res.trace.is_monotone());
        prop_assert!(res.time_to_best_s <= res.runtime_s);
    }
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(Metric::from_name(m.name()).unwrap(), m);
    }
}
