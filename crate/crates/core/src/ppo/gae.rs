use crate::error::{Error, Result};

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{name}[{i}] = {}", xs[i]))),
        None => Ok(()),
    }
}

/// Generalized advantage estimation.
///
/// `delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, with
/// `V_T = bootstrap_value`. Returns `(advantages, A + V)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Usage(format!(
            "misaligned sequences: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    check_finite("rewards", rewards)?;
    check_finite("values", values)?;
    check_finite("bootstrap_value", &[bootstrap_value])?;
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Discounted reward-to-go, restarting at episode ends and bootstrapped
/// after the final step when it is not terminal.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap_value: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap_value;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Shift to zero mean and scale to unit population std, in place.
pub fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter_mut().for_each(|x| *x -= mean);
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-12 {
        xs.iter_mut().for_each(|x| *x /= std);
    }
    // One correction pass removes the rounding residue of the first mean.
    let resid = xs.iter().sum::<f64>() / n;
    xs.iter_mut().for_each(|x| *x -= resid);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_terminal_step() {
        let (a, t) = compute_gae(&[1.0], &[0.5], &[true], 0.0, 0.99, 0.95).unwrap();
        assert_eq!(a, vec![0.5]);
        assert_eq!(t, vec![1.0]);
    }

    #[test]
    fn myopic_limit() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let v = [0.1, 0.2, -0.3, 0.4];
        let (a, _) = compute_gae(&r, &v, &[false, false, true, false], 7.0, 0.0, 0.95).unwrap();
        for i in 0..4 {
            assert_eq!(a[i], r[i] - v[i]);
        }
    }

    #[test]
    fn three_step_reference() {
        let (a, _) = compute_gae(&[1.0; 3], &[0.5; 3], &[false, false, true], 0.0, 0.9, 0.95).unwrap();
        assert!((a[0] - 2.1277625).abs() < 1e-12, "{}", a[0]);
        assert!((a[1] - 1.3775).abs() < 1e-12);
        assert!((a[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(compute_gae(&[f64::NAN], &[0.0], &[true], 0.0, 0.9, 0.9).is_err());
        assert!(compute_gae(&[1.0], &[0.0, 1.0], &[true], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn returns_restart_and_bootstrap() {
        let g = discounted_returns(&[1.0, 1.0, 1.0], &[false, true, false], 10.0, 0.5);
        assert_eq!(g, vec![1.5, 1.0, 6.0]);
    }

    #[test]
    fn standardize_moments() {
        let mut xs: Vec<f64> = (0..257).map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0).collect();
        standardize(&mut xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-10);
    }
}
