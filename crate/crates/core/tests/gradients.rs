//! Analytic gradients against central finite differences.

use momentppo_core::critic::{quantile_huber_loss, QuantileAtoms};
use momentppo_core::nn::{mlp_backward, mlp_forward, MlpParams};
use momentppo_core::ppo::{critic_loss, ppo_surrogate, ActorCritic, RolloutBatch};
use momentppo_core::Rng;

const H: f64 = 1e-5;

/// Relative error with an absolute floor for near-zero components.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + H;
            let up = f(&probe);
            probe[i] = orig - H;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_net(rng: &mut Rng, sizes: &[usize]) -> MlpParams {
    let mut p = MlpParams::init(sizes, 1.0, rng).unwrap();
    for l in 0..p.num_layers() {
        for b in p.biases_mut(l) {
            *b = rng.normal(0.0, 0.5);
        }
    }
    p
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut rng = Rng::derive(2024, "mlp-fd");
    let shapes: [&[usize]; 4] = [&[2, 3, 2], &[3, 5, 4, 2], &[1, 4, 1], &[4, 6, 3]];
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let sizes = shapes[trial % shapes.len()];
        let net = random_net(&mut rng, sizes);
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.normal(0.0, 1.0)).collect();
        let out_grad: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.normal(0.0, 1.0)).collect();
        let (_, cache) = mlp_forward(&net, &input).unwrap();
        let analytic = mlp_backward(&net, &cache, &out_grad).unwrap();
        let numeric = central_diff(&net.flatten(), |flat| {
            let p = MlpParams::unflatten(sizes, flat).unwrap();
            let y = p.predict(&input).unwrap();
            y.iter().zip(&out_grad).map(|(a, b)| a * b).sum()
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

/// Random atoms/targets that keep every residual away from the loss kinks.
fn smooth_instance(rng: &mut Rng, kappa: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let k = 1 + rng.below(12);
        let m = 1 + rng.below(5);
        let atoms: Vec<f64> = (0..k).map(|_| rng.normal(0.0, 2.0)).collect();
        let targets: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 2.0)).collect();
        let near_kink = atoms.iter().any(|q| {
            targets.iter().any(|z| {
                let u = (z - q).abs();
                u < 1e-3 || (u - kappa).abs() < 1e-3
            })
        });
        if !near_kink {
            return (atoms, targets);
        }
    }
}

#[test]
fn quantile_huber_gradient_matches_finite_differences() {
    let mut rng = Rng::derive(7, "qh-fd");
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let kappa = if trial % 2 == 0 { 1.0 } else { 0.1 };
        let (atoms, targets) = smooth_instance(&mut rng, kappa);
        let (_, g) = quantile_huber_loss(&QuantileAtoms::new(atoms.clone()).unwrap(), &targets, kappa).unwrap();
        let numeric = central_diff(&atoms, |a| {
            quantile_huber_loss(&QuantileAtoms::new(a.to_vec()).unwrap(), &targets, kappa)
                .unwrap()
                .0
        });
        for (a, n) in g.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn toy_batch(rng: &mut Rng, agent: &ActorCritic, n: usize) -> RolloutBatch {
    let obs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)]).collect();
    let actions: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal(0.0, 1.0)]).collect();
    // Old log-probs near the current ones keep ratios on both sides of the clip range.
    let old_log_probs = obs
        .iter()
        .zip(&actions)
        .map(|(o, a)| agent.policy.log_prob(o, a).unwrap() + rng.normal(0.0, 0.3))
        .collect();
    RolloutBatch {
        atoms: obs.iter().map(|o| agent.atoms(o).unwrap()).collect(),
        obs,
        actions,
        rewards: vec![0.0; n],
        dones: vec![false; n],
        old_log_probs,
        advantages: (0..n).map(|_| rng.normal(0.0, 1.0)).collect(),
        value_targets: (0..n).map(|_| rng.normal(0.0, 3.0)).collect(),
        bootstrap_value: 0.0,
        episode_returns: vec![],
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut rng = Rng::derive(11, "surrogate-fd");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let agent = ActorCritic::init(2, 1, &[5], 3, rng.normal(-0.3, 0.2), &mut rng).unwrap();
        let batch = toy_batch(&mut rng, &agent, 12);
        let idx: Vec<usize> = (0..12).collect();
        let out = ppo_surrogate(&batch, &idx, &agent.policy, 0.2, 0.01).unwrap();
        let mut flat = agent.policy.mean.flatten();
        flat.extend_from_slice(&agent.policy.log_std);
        let sizes = agent.policy.mean.layer_sizes().to_vec();
        let numeric = central_diff(&flat, |x| {
            let mut p = agent.policy.clone();
            let n = p.mean.num_params();
            p.mean = MlpParams::unflatten(&sizes, &x[..n]).unwrap();
            p.log_std.copy_from_slice(&x[n..]);
            ppo_surrogate(&batch, &idx, &p, 0.2, 0.01).unwrap().loss
        });
        for (a, n) in out.grad.iter().zip(&numeric) {
            // Samples sitting exactly on a clip boundary are measure-zero.
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut rng = Rng::derive(12, "critic-fd");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let agent = ActorCritic::init(2, 1, &[4], 5, 0.0, &mut rng).unwrap();
        let batch = toy_batch(&mut rng, &agent, 6);
        let idx: Vec<usize> = (0..6).collect();
        let (_, g) = critic_loss(&batch, &idx, &agent.critic, 1.0).unwrap();
        let sizes = agent.critic.layer_sizes().to_vec();
        let numeric = central_diff(&agent.critic.flatten(), |x| {
            let c = MlpParams::unflatten(&sizes, x).unwrap();
            critic_loss(&batch, &idx, &c, 1.0).unwrap().0
        });
        for (a, n) in g.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}
