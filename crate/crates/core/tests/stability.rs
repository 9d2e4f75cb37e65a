//! Post-update distributions, alignment statistics and CVaR selection.

use momentppo_core::envs::PointmassParams;
use momentppo_core::ppo::{draw_minibatches, update_once, Collector};
use momentppo_core::stability::{
    crs_select_update, evaluate_returns, pearson, permutation_p_value, sample_post_update, select_by_cvar,
    stability_sigma, value_alignment, variance_alignment, PostUpdateDistributions,
};
use momentppo_core::train::collect_finalized;
use momentppo_core::{AgentState, EnvSpec, EvalStreams, PpoConfig, Rng, RolloutBatch, StabilityConfig};
use proptest::prelude::*;

fn small_config() -> PpoConfig {
    PpoConfig {
        rollout_len: 256,
        minibatch_size: 32,
        hidden_sizes: vec![16],
        lr: 3e-3,
        ..PpoConfig::default()
    }
}

fn small_stability(n_forks: usize) -> StabilityConfig {
    StabilityConfig { n_forks, eval_episodes: 2, permutations: 1000, ..StabilityConfig::default() }
}

fn quiet_pointmass() -> EnvSpec {
    EnvSpec::Pointmass(PointmassParams { sigma_n: 0.0, heavy_tail: false, ..Default::default() })
}

fn heavy_pointmass() -> EnvSpec {
    EnvSpec::Pointmass(PointmassParams { heavy_tail: true, ..Default::default() })
}

fn fixture(env: &EnvSpec, cfg: &PpoConfig, seed: u64) -> (AgentState, RolloutBatch) {
    let rng = Rng::derive(seed, "stability-fixture");
    let state = AgentState::init(env.obs_dim(), env.act_dim(), cfg, &rng).unwrap();
    let mut collector = Collector::new(env.clone(), rng.child("collect")).unwrap();
    let batch = collect_finalized(&mut collector, &state, cfg).unwrap();
    (state, batch)
}

#[test]
fn post_update_sampling_is_reproducible_and_prefix_stable() {
    let env = heavy_pointmass();
    let cfg = small_config();
    let (state, batch) = fixture(&env, &cfg, 1);
    for streams in [EvalStreams::Shared, EvalStreams::PerFork] {
        let stab = |n| StabilityConfig { eval_streams: streams, ..small_stability(n) };
        let rng = Rng::derive(1, "post");
        let a = sample_post_update(&state, &batch, &env, &cfg, &stab(8), "c", &rng).unwrap();
        let b = sample_post_update(&state, &batch, &env, &cfg, &stab(8), "c", &rng).unwrap();
        assert_eq!(a, b);
        // Fork i depends only on its own index, not on how many forks run.
        let short = sample_post_update(&state, &batch, &env, &cfg, &stab(3), "c", &rng).unwrap();
        assert_eq!(short.samples[..], a.samples[..3]);
    }
}

#[test]
fn post_update_sampling_keeps_the_checkpoint() {
    let env = heavy_pointmass();
    let cfg = small_config();
    let (state, batch) = fixture(&env, &cfg, 2);
    let before = state.params.checksum();
    let d = sample_post_update(&state, &batch, &env, &cfg, &small_stability(4), "c", &Rng::new(2, 0)).unwrap();
    assert_eq!(state.params.checksum(), before);
    assert_eq!(d.samples.len(), 4);
    assert!(d.exploration_off);
}

#[test]
fn two_forks_give_two_distinct_pairs() {
    let env = heavy_pointmass();
    let cfg = small_config();
    let (state, batch) = fixture(&env, &cfg, 3);
    let d = sample_post_update(&state, &batch, &env, &cfg, &small_stability(2), "c", &Rng::new(3, 0)).unwrap();
    assert_eq!(d.samples.len(), 2);
    assert_ne!(d.samples[0].post_return, d.samples[1].post_return);
    assert_ne!(d.samples[0].post_value, d.samples[1].post_value);
}

#[test]
fn zero_learning_rate_collapses_the_return_distribution() {
    let env = quiet_pointmass();
    let cfg = PpoConfig { lr: 0.0, ..small_config() };
    let (state, batch) = fixture(&env, &cfg, 4);
    let d = sample_post_update(&state, &batch, &env, &cfg, &small_stability(16), "c", &Rng::new(4, 0)).unwrap();
    assert_eq!(stability_sigma(&d), 0.0);
}

#[test]
fn alignment_of_collapsed_distributions_is_flagged() {
    let env = quiet_pointmass();
    let cfg = PpoConfig { lr: 0.0, ..small_config() };
    let (state, batch) = fixture(&env, &cfg, 5);
    let stab = StabilityConfig {
        value_states: momentppo_core::stability::ValueStates::Probe,
        ..small_stability(8)
    };
    let dists: Vec<PostUpdateDistributions> = (0..3)
        .map(|i| sample_post_update(&state, &batch, &env, &cfg, &stab, &i.to_string(), &Rng::new(5, i)).unwrap())
        .collect();
    let mut rng = Rng::new(5, 99);
    let v = value_alignment(&dists[0], 1000, &mut rng).unwrap();
    assert!(v.degenerate);
    assert_eq!(v.p_value, 1.0);
    let var = variance_alignment(&dists, 1000, &mut rng).unwrap();
    assert!(var.degenerate);
    assert_eq!(var.n, 3);
    assert!(variance_alignment(&dists[..2], 1000, &mut rng).is_err());
}

#[test]
fn single_candidate_crs_is_a_plain_update() {
    let env = heavy_pointmass();
    let cfg = small_config();
    let (state, batch) = fixture(&env, &cfg, 6);
    let rng = Rng::derive(6, "crs");
    let out = crs_select_update(&state, &batch, &env, &cfg, 1, 2, 0.1, EvalStreams::Shared, &rng).unwrap();
    let mb = draw_minibatches(batch.len(), cfg.minibatch_size, 1, &mut rng.child("minibatches")).unwrap();
    let (direct, stats) = update_once(&state, &batch, &mb[0], &cfg).unwrap();
    assert_eq!(out.selected, Some(0));
    assert_eq!(out.state, direct);
    assert_eq!(out.stats, Some(stats));
}

fn brute_force_cvar(xs: &[f64], alpha: f64) -> f64 {
    let m = ((alpha * xs.len() as f64).floor() as usize).max(1);
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s[..m].iter().sum::<f64>() / m as f64
}

#[test]
fn cvar_selection_matches_exhaustive_argmax() {
    let mut rng = Rng::derive(7, "crs-synthetic");
    for case in 0..1000 {
        let k = 1 + rng.below(10);
        let alpha = [0.05, 0.1, 0.25, 0.5, 1.0][rng.below(5)];
        let candidates: Vec<Option<Vec<f64>>> = (0..k)
            .map(|_| {
                if rng.uniform() < 0.1 {
                    return None;
                }
                let e = 1 + rng.below(16);
                // Coarse grid so ties actually occur.
                Some((0..e).map(|_| (rng.normal(0.0, 3.0) * 2.0).round() / 2.0).collect())
            })
            .collect();
        let mut want: Option<(usize, f64)> = None;
        for (i, c) in candidates.iter().enumerate() {
            if let Some(c) = c {
                let v = brute_force_cvar(c, alpha);
                if want.is_none() || v > want.unwrap().1 {
                    want = Some((i, v));
                }
            }
        }
        let got = select_by_cvar(&candidates, alpha).unwrap();
        assert_eq!(got, want, "case {case}");
    }
}

#[test]
fn crs_selected_candidate_dominates_the_others() {
    let env = heavy_pointmass();
    let cfg = small_config();
    let (state, batch) = fixture(&env, &cfg, 8);
    let out = crs_select_update(&state, &batch, &env, &cfg, 4, 6, 0.25, EvalStreams::PerFork, &Rng::new(8, 1)).unwrap();
    let best = out.cvars[out.selected.unwrap()].unwrap();
    assert!(out.cvars.iter().flatten().all(|c| *c <= best));
}

#[test]
fn full_level_crs_on_a_quiet_env_picks_the_best_mean() {
    let env = quiet_pointmass();
    let cfg = PpoConfig { lr: 3e-2, ..small_config() };
    let (state, batch) = fixture(&env, &cfg, 9);
    let rng = Rng::derive(9, "crs");
    let out = crs_select_update(&state, &batch, &env, &cfg, 4, 3, 1.0, EvalStreams::Shared, &rng).unwrap();
    let mbs = draw_minibatches(batch.len(), cfg.minibatch_size, 4, &mut rng.child("minibatches")).unwrap();
    let means: Vec<f64> = mbs
        .iter()
        .map(|mb| {
            let (next, _) = update_once(&state, &batch, mb, &cfg).unwrap();
            let r = evaluate_returns(&env, &next.params.policy, 3, &mut rng.child("eval")).unwrap();
            r.iter().sum::<f64>() / 3.0
        })
        .collect();
    let argmax = (0..4).fold(0, |b, i| if means[i] > means[b] { i } else { b });
    assert_eq!(out.selected, Some(argmax));
}

#[test]
fn permutation_p_values_are_uniform_under_independence() {
    let mut rng = Rng::derive(10, "null");
    let mut ps: Vec<f64> = (0..200)
        .map(|_| {
            let x: Vec<f64> = (0..20).map(|_| rng.standard_normal()).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.standard_normal()).collect();
            permutation_p_value(&x, &y, 1000, &mut rng).unwrap().p_value
        })
        .collect();
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64 / n - p).abs().max((p - i as f64 / n).abs()))
        .fold(0.0, f64::max);
    // 0.1% critical value of the one-sample KS statistic at n = 200.
    assert!(ks < 1.95 / n.sqrt(), "KS statistic {ks}");
}

#[test]
fn strong_dependence_gives_small_p_values() {
    let mut rng = Rng::derive(11, "dep");
    let x: Vec<f64> = (0..50).map(|_| rng.standard_normal()).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.3 * rng.standard_normal()).collect();
    let t = permutation_p_value(&x, &y, 2000, &mut rng).unwrap();
    assert!(t.r > 0.9);
    assert_eq!(t.p_value, 1.0 / 2001.0);
}

fn samples() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40)
}

proptest! {
    #[test]
    fn pearson_is_affine_invariant(pairs in samples(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = pearson(&x, &y).unwrap();
        prop_assume!(!base.degenerate);
        let scaled: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((pearson(&x, &scaled).unwrap().r - base.r).abs() < 1e-9);
        prop_assert!((pearson(&flipped, &y).unwrap().r + base.r).abs() < 1e-9);
    }

    #[test]
    fn sigma_is_translation_invariant_and_scale_linear(
        rets in prop::collection::vec(-100.0..100.0f64, 2..40),
        c in -1e3..1e3f64,
        s in 0.01..100.0f64,
    ) {
        let dist = |rs: &[f64]| PostUpdateDistributions {
            checkpoint_id: "x".into(),
            samples: rs
                .iter()
                .enumerate()
                .map(|(i, r)| momentppo_core::stability::PostUpdateSample { update_id: i, post_return: *r, post_value: 0.0 })
                .collect(),
            eval_episodes: 1,
            exploration_off: true,
            invalid: 0,
        };
        let base = stability_sigma(&dist(&rets));
        let shifted: Vec<f64> = rets.iter().map(|r| r + c).collect();
        let scaled: Vec<f64> = rets.iter().map(|r| r * s).collect();
        prop_assert!((stability_sigma(&dist(&shifted)) - base).abs() < 1e-8 * (1.0 + base + c.abs()));
        prop_assert!((stability_sigma(&dist(&scaled)) - s * base).abs() < 1e-9 * (1.0 + s * base));
    }
}
