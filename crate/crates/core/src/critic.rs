//! Quantile critic: atoms, quantile-Huber loss, and moment statistics.

use crate::envs::midpoint_taus;
use crate::error::{Error, Result};
use crate::nn::MlpParams;

/// Default number of quantile atoms.
pub const DEFAULT_ATOMS: usize = 51;

/// Variance below which skewness and kurtosis fall back to 0 and 1.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// K equally weighted atoms at midpoint levels `(2j - 1) / (2K)`.
///
/// Atoms come straight from the network and may cross; nothing here assumes
/// they are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileAtoms {
    atoms: Vec<f64>,
}

impl QuantileAtoms {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Usage("quantile atoms cannot be empty".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn taus(&self) -> Vec<f64> {
        midpoint_taus(self.atoms.len())
    }

    /// Scalar value estimate V(s).
    pub fn mean(&self) -> f64 {
        self.atoms.iter().sum::<f64>() / self.atoms.len() as f64
    }

    pub fn moments(&self) -> MomentStats {
        moments_from_atoms(self)
    }

    pub fn cvar(&self, alpha: f64) -> Result<f64> {
        cvar_from_atoms(self, alpha)
    }
}

/// Population moments of an atom set. Kurtosis is raw (a normal gives 3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub cvar: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn predict_atoms(critic: &MlpParams, state: &[f64]) -> Result<QuantileAtoms> {
    let out = critic.predict(state)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("critic output is non-finite at state {state:?}")));
    }
    QuantileAtoms::new(out)
}

pub fn moments_from_atoms(atoms: &QuantileAtoms) -> MomentStats {
    let k = atoms.len() as f64;
    let mean = atoms.mean();
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &a in atoms.atoms() {
        let d = a - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / k, m3 / k, m4 / k);
    let (skewness, kurtosis) = if m2 < DEGENERATE_VARIANCE {
        (0.0, 1.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    };
    MomentStats {
        mean,
        variance: m2,
        skewness,
        kurtosis,
        cvar: None,
        alpha: None,
    }
}

/// Mean of the `max(1, floor(alpha K))` smallest atoms.
pub fn cvar_from_atoms(atoms: &QuantileAtoms, alpha: f64) -> Result<f64> {
    cvar_of_samples(atoms.atoms(), alpha)
}

/// Lower-tail CVaR of an arbitrary sample set.
pub fn cvar_of_samples(samples: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Usage(format!("CVaR level must lie in (0, 1], got {alpha}")));
    }
    if samples.is_empty() {
        return Err(Error::Usage("CVaR of an empty sample".into()));
    }
    let m = ((alpha * samples.len() as f64).floor() as usize).max(1);
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[..m].iter().sum::<f64>() / m as f64)
}

/// Moments and CVaR together.
pub fn full_stats(atoms: &QuantileAtoms, alpha: f64) -> Result<MomentStats> {
    let mut s = moments_from_atoms(atoms);
    s.cvar = Some(cvar_from_atoms(atoms, alpha)?);
    s.alpha = Some(alpha);
    Ok(s)
}

/// Quantile-Huber loss of predicted atoms against target samples.
///
/// `loss = 1/(K M) sum_{j,m} |tau_j - 1{u < 0}| * huber_kappa(u) / kappa`
/// with `u = target_m - atom_j`. Returns the loss and its gradient with
/// respect to each atom.
pub fn quantile_huber_loss(pred: &QuantileAtoms, targets: &[f64], kappa: f64) -> Result<(f64, Vec<f64>)> {
    quantile_huber_loss_at_levels(pred.atoms(), &pred.taus(), targets, kappa)
}

/// Same loss with explicit quantile levels, one per atom.
pub fn quantile_huber_loss_at_levels(
    atoms: &[f64],
    taus: &[f64],
    targets: &[f64],
    kappa: f64,
) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::Usage("quantile loss needs at least one target".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::Usage(format!("kappa must be positive, got {kappa}")));
    }
    if atoms.len() != taus.len() || atoms.is_empty() {
        return Err(Error::Usage(format!(
            "{} atoms but {} quantile levels",
            atoms.len(),
            taus.len()
        )));
    }
    let k = atoms.len();
    let norm = 1.0 / (k * targets.len()) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; k];
    for (j, (&q, &tau)) in atoms.iter().zip(taus).enumerate() {
        for &z in targets {
            let u = z - q;
            let weight = if u < 0.0 { 1.0 - tau } else { tau };
            let (h, dh) = if u.abs() <= kappa {
                (0.5 * u * u, u)
            } else {
                (kappa * (u.abs() - 0.5 * kappa), kappa * u.signum())
            };
            loss += weight * h / kappa;
            // du/dq = -1
            grad[j] -= weight * dh / kappa;
        }
    }
    grad.iter_mut().for_each(|g| *g *= norm);
    Ok((loss * norm, grad))
}
