//! Self-checks on a concrete model: analytic gradients against central
//! finite differences, and exact enumeration against sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{exact_value, exact_value_gradient, sample_trajectories};
use crate::entropy::{
    exact_conditional_entropy, exact_entropy_gradient, sampled_conditional_entropy, total_probability, EntropyEstimate,
};
use crate::error::Result;
use crate::inference::OperatorModel;
use crate::model::MaskMdp;
use crate::policy::{ConditioningMode, PolicyParams};
use crate::scalar::{lit, to_f64, Scalar};

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Parameters drawn uniformly from `[-scale, scale]`.
pub fn random_policy<T: Scalar>(mdp: &MaskMdp<T>, mode: ConditioningMode, scale: f64, seed: u64) -> PolicyParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PolicyParams::zeros(mdp, mode);
    for x in p.theta_mut() {
        *x = lit(rng.random_range(-scale..=scale));
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientFamilyCheck {
    pub name: &'static str,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub families: Vec<GradientFamilyCheck>,
    pub tolerance: f64,
}

impl GradientCheckReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(|f| f.max_rel_error <= self.tolerance)
    }
}

/// Step for the finite differences below.
pub const FD_STEP: f64 = 4e-3;

/// Richardson-extrapolated central difference of `f` at 0:
/// `(4 D(h/2) − D(h)) / 3` with `D(h) = (f(h) − f(−h)) / 2h`. Truncation error
/// is `O(h⁴)`, which allows a step large enough to keep round-off near 1e-13.
pub fn richardson_derivative(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let d_h = (f(h)? - f(-h)?) / (2.0 * h);
    let d_half = (f(h / 2.0)? - f(-h / 2.0)?) / h;
    Ok((4.0 * d_half - d_h) / 3.0)
}

/// Compares directional derivatives `∇f · d` with
/// [`richardson_derivative`] of `s ↦ f(θ + s d)` along `probes` random unit directions for
/// `𝐏(y)`, `𝐏(W_T = 1 | y)`, `V` and the exact `H`. Observation sequences
/// are sampled from the policy.
pub fn gradient_check(
    mdp: &MaskMdp<f64>,
    policy: &PolicyParams<f64>,
    probes: usize,
    seed: u64,
    cap: u64,
) -> Result<GradientCheckReport> {
    const FLOOR: f64 = 1e-8;
    let h = FD_STEP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = policy.n_params();
    let direction = |rng: &mut ChaCha8Rng| {
        let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        d.iter_mut().for_each(|x| *x /= norm);
        d
    };
    let shifted = |d: &[f64], s: f64| {
        let mut p = policy.clone();
        for (x, &di) in p.theta_mut().iter_mut().zip(d) {
            *x += s * di;
        }
        p
    };
    let dot = |g: &[f64], d: &[f64]| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();

    let sequences: Vec<Vec<usize>> = sample_trajectories(mdp, policy, probes, seed)
        .into_iter()
        .map(|t| t.observations)
        .collect();
    let base = OperatorModel::new(mdp, policy);
    let mut seq_err = 0.0f64;
    let mut post_err = 0.0f64;
    for y in &sequences {
        let d = direction(&mut rng);
        let post = base.secret_posterior(y)?;
        let fd_seq = richardson_derivative(|s| Ok(OperatorModel::new(mdp, &shifted(&d, s)).sequence_probability(y)), h)?;
        seq_err = seq_err.max(relative_error(dot(&post.grad_p_obs, &d), fd_seq, FLOOR));
        let fd_post = richardson_derivative(
            |s| Ok(OperatorModel::new(mdp, &shifted(&d, s)).secret_posterior(y)?.p_secret),
            h,
        )?;
        post_err = post_err.max(relative_error(dot(&post.grad_p_secret, &d), fd_post, FLOOR));
    }

    let (_, value_grad) = exact_value_gradient(mdp, policy);
    let (_, entropy_grad) = exact_entropy_gradient(mdp, policy, cap)?;
    let mut value_err = 0.0f64;
    let mut entropy_err = 0.0f64;
    for _ in 0..probes {
        let d = direction(&mut rng);
        let fd_v = richardson_derivative(|s| Ok(exact_value(mdp, &shifted(&d, s))), h)?;
        value_err = value_err.max(relative_error(dot(&value_grad, &d), fd_v, FLOOR));
        let fd_h = richardson_derivative(|s| Ok(exact_conditional_entropy(mdp, &shifted(&d, s), cap)?.value), h)?;
        entropy_err = entropy_err.max(relative_error(dot(&entropy_grad, &d), fd_h, FLOOR));
    }

    Ok(GradientCheckReport {
        families: vec![
            GradientFamilyCheck {
                name: "sequence_probability",
                probes,
                max_rel_error: seq_err,
            },
            GradientFamilyCheck {
                name: "secret_posterior",
                probes,
                max_rel_error: post_err,
            },
            GradientFamilyCheck {
                name: "value",
                probes,
                max_rel_error: value_err,
            },
            GradientFamilyCheck {
                name: "entropy",
                probes,
                max_rel_error: entropy_err,
            },
        ],
        tolerance: 1e-4,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationCheck {
    /// `Σ_y 𝐏_θ(y)`.
    pub total_probability: f64,
    pub exact: EntropyEstimate<f64>,
    pub sampled: EntropyEstimate<f64>,
}

impl EnumerationCheck {
    /// Total probability within 1e-9 of one and the sampled entropy within
    /// four standard errors (plus 1e-3) of the exact value.
    pub fn passed(&self) -> bool {
        (self.total_probability - 1.0).abs() <= 1e-9
            && (self.exact.value - self.sampled.value).abs() <= 4.0 * self.sampled.std_error + 1e-3
    }
}

pub fn enumerate_check<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    samples: usize,
    seed: u64,
    cap: u64,
) -> Result<EnumerationCheck> {
    let total = total_probability(mdp, policy, cap)?;
    let exact = exact_conditional_entropy(mdp, policy, cap)?;
    let obs: Vec<Vec<usize>> = sample_trajectories(mdp, policy, samples, seed)
        .into_iter()
        .map(|t| t.observations)
        .collect();
    let sampled = sampled_conditional_entropy(mdp, policy, &obs)?;
    let conv = |e: EntropyEstimate<T>| EntropyEstimate {
        value: to_f64(e.value),
        mode: e.mode,
        sample_count: e.sample_count,
        std_error: to_f64(e.std_error),
    };
    Ok(EnumerationCheck {
        total_probability: to_f64(total),
        exact: conv(exact),
        sampled: conv(sampled),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::DEFAULT_ENUMERATION_CAP;
    use crate::scenarios::build_illustrative;

    #[test]
    fn illustrative_passes_both_checks() {
        let mdp = build_illustrative::<f64>().build_mask_mdp().unwrap();
        let theta = random_policy(&mdp, ConditioningMode::Augmented, 1.0, 3);
        let report = gradient_check(&mdp, &theta, 5, 1, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!(report.passed(), "{report:?}");
        let check = enumerate_check(&mdp, &theta, 4000, 2, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!(check.passed(), "{check:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-12);
    }
}
