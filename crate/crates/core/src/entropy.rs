//! Conditional entropy `H(W_T | Y; θ)` of the final-state secret and its
//! policy gradient, either by exact enumeration of observation sequences or
//! from on-policy samples.
//!
//! Entropies are in bits. Posteriors are clamped to `[1e-12, 1 − 1e-12]`
//! inside logarithms only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{SequenceEvaluator, SequenceStats};
use crate::model::MaskMdp;
use crate::policy::PolicyParams;
use crate::scalar::{lit, Scalar};

/// Default limit on `|O|^L` for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate<T> {
    /// Bits.
    pub value: T,
    pub mode: EstimateMode,
    /// Number of samples `V` (0 for exact).
    pub sample_count: usize,
    /// Standard error of the sampled estimate (0 for exact).
    pub std_error: T,
}

/// `|O|^L`, the number of observation sequences an exact sum ranges over.
pub fn enumeration_size<T: Scalar>(mdp: &MaskMdp<T>) -> f64 {
    (mdp.n_observations() as f64).powi(mdp.sequence_len() as i32)
}

fn check_cap<T: Scalar>(mdp: &MaskMdp<T>, cap: u64) -> Result<()> {
    let count = enumeration_size(mdp);
    if count > cap as f64 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    Ok(())
}

fn clamped_log2<T: Scalar>(p: T) -> T {
    let lo = lit::<T>(LOG_CLAMP);
    p.max(lo).min(T::one() - lo).log2()
}

/// `−Σ_w 𝐏(w|y) log₂ 𝐏(w|y)` for one sequence.
pub fn posterior_entropy<T: Scalar>(p_secret: T) -> T {
    let p1 = p_secret;
    let p0 = T::one() - p_secret;
    -(p1 * clamped_log2(p1) + p0 * clamped_log2(p0))
}

/// The per-sequence bracket of the entropy gradient:
/// `−Σ_w [log₂𝐏(w|y) ∇𝐏(w|y) + 𝐏(w|y) log₂𝐏(w|y) ∇𝐏(y)/𝐏(y) + ∇𝐏(w|y)/ln 2]`.
fn accumulate_gradient_term<T: Scalar>(stats: &SequenceStats<T>, weight: T, out: &mut [T]) {
    let ln2 = lit::<T>(std::f64::consts::LN_2);
    let p1 = stats.p_secret;
    let p0 = T::one() - p1;
    let l1 = clamped_log2(p1);
    let l0 = clamped_log2(p0);
    let plogp = p1 * l1 + p0 * l0;
    for ((o, &gp1), &sc) in out.iter_mut().zip(&stats.grad_p_secret).zip(&stats.score) {
        let gp0 = -gp1;
        let term = l1 * gp1 + l0 * gp0 + plogp * sc + (gp1 + gp0) / ln2;
        *o -= weight * term;
    }
}

/// Enumerates every observation sequence with a nonzero prefix probability.
fn realizable_sequences<T: Scalar>(mdp: &MaskMdp<T>, policy: &PolicyParams<T>) -> Vec<Vec<usize>> {
    let ev = SequenceEvaluator::new(mdp, policy);
    let len = mdp.sequence_len();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(len);
    let n = mdp.n_aug();
    let mut scratch = vec![T::zero(); n];
    dfs(&ev, mdp, mdp.initial().to_vec(), &mut prefix, len, &mut scratch, &mut out);
    out
}

fn dfs<T: Scalar>(
    ev: &SequenceEvaluator<'_, T>,
    mdp: &MaskMdp<T>,
    alpha: Vec<T>,
    prefix: &mut Vec<usize>,
    len: usize,
    scratch: &mut [T],
    out: &mut Vec<Vec<usize>>,
) {
    for o in 0..mdp.n_observations() {
        let b = mdp.emission_row(o);
        let w: Vec<T> = alpha.iter().zip(b).map(|(&a, &bj)| a * bj).collect();
        if w.iter().all(|&x| x == T::zero()) {
            continue;
        }
        prefix.push(o);
        if prefix.len() == len {
            out.push(prefix.clone());
        } else {
            let mut next = vec![T::zero(); w.len()];
            ev.step_forward(&w, scratch, &mut next);
            // keep magnitudes bounded; only the support matters here
            let m = next.iter().copied().fold(T::zero(), T::max);
            if m > T::zero() {
                next.iter_mut().for_each(|x| *x /= m);
                dfs(ev, mdp, next, prefix, len, scratch, out);
            }
        }
        prefix.pop();
    }
}

fn evaluate_all<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    seqs: &[Vec<usize>],
    with_grad: bool,
    skip_unrealizable: bool,
) -> Result<Vec<SequenceStats<T>>> {
    let ev = SequenceEvaluator::new(mdp, policy);
    let results: Vec<Result<SequenceStats<T>>> = seqs.par_iter().map(|y| ev.evaluate(y, with_grad)).collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(Error::ZeroProbabilityObservation) if skip_unrealizable => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `Σ_{y ∈ O^L} 𝐏_θ(y)`; should be 1.
pub fn total_probability<T: Scalar>(mdp: &MaskMdp<T>, policy: &PolicyParams<T>, cap: u64) -> Result<T> {
    check_cap(mdp, cap)?;
    let seqs = realizable_sequences(mdp, policy);
    let stats = evaluate_all(mdp, policy, &seqs, false, true)?;
    Ok(stats.iter().map(|s| s.log_prob.exp()).sum())
}

/// Exact `H(W_T | Y; θ)` by summing over all observation sequences.
pub fn exact_conditional_entropy<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    cap: u64,
) -> Result<EntropyEstimate<T>> {
    check_cap(mdp, cap)?;
    let seqs = realizable_sequences(mdp, policy);
    let stats = evaluate_all(mdp, policy, &seqs, false, true)?;
    let value = stats
        .iter()
        .map(|s| s.log_prob.exp() * posterior_entropy(s.p_secret))
        .sum();
    Ok(EntropyEstimate {
        value,
        mode: EstimateMode::Exact,
        sample_count: 0,
        std_error: T::zero(),
    })
}

/// Exact entropy and its gradient: the sampled gradient formula with weights
/// `𝐏_θ(y)` over the full enumeration instead of `1/V` over samples.
pub fn exact_entropy_gradient<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    cap: u64,
) -> Result<(EntropyEstimate<T>, Vec<T>)> {
    check_cap(mdp, cap)?;
    let seqs = realizable_sequences(mdp, policy);
    let stats = evaluate_all(mdp, policy, &seqs, true, true)?;
    let mut grad = vec![T::zero(); policy.n_params()];
    let mut value = T::zero();
    for s in &stats {
        let w = s.log_prob.exp();
        value += w * posterior_entropy(s.p_secret);
        accumulate_gradient_term(s, w, &mut grad);
    }
    Ok((
        EntropyEstimate {
            value,
            mode: EstimateMode::Exact,
            sample_count: 0,
            std_error: T::zero(),
        },
        grad,
    ))
}

fn sampled_estimate<T: Scalar>(terms: &[T]) -> EntropyEstimate<T> {
    let v = terms.len();
    let vt = lit::<T>(v as f64);
    let mean = terms.iter().copied().sum::<T>() / vt;
    let std_error = if v > 1 {
        let var = terms.iter().map(|&h| (h - mean) * (h - mean)).sum::<T>() / lit((v - 1) as f64);
        (var / vt).sqrt()
    } else {
        T::zero()
    };
    EntropyEstimate {
        value: mean,
        mode: EstimateMode::Sampled,
        sample_count: v,
        std_error,
    }
}

/// Sample approximation `−(1/V) Σ_v Σ_w 𝐏(w|y_v) log₂ 𝐏(w|y_v)` with exact
/// posteriors. Samples must come from the same policy.
pub fn sampled_conditional_entropy<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    samples: &[Vec<usize>],
) -> Result<EntropyEstimate<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no observation samples".into()));
    }
    let stats = evaluate_all(mdp, policy, samples, false, false)?;
    let terms: Vec<T> = stats.iter().map(|s| posterior_entropy(s.p_secret)).collect();
    Ok(sampled_estimate(&terms))
}

/// Sampled entropy together with the sampled gradient estimate.
pub fn sampled_entropy_gradient<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    samples: &[Vec<usize>],
) -> Result<(EntropyEstimate<T>, Vec<T>)> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no observation samples".into()));
    }
    let stats = evaluate_all(mdp, policy, samples, true, false)?;
    let inv_v = T::one() / lit(samples.len() as f64);
    let mut grad = vec![T::zero(); policy.n_params()];
    for s in &stats {
        accumulate_gradient_term(s, inv_v, &mut grad);
    }
    let terms: Vec<T> = stats.iter().map(|s| posterior_entropy(s.p_secret)).collect();
    Ok((sampled_estimate(&terms), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::binary_entropy;
    use crate::policy::ConditioningMode;
    use crate::scenarios::{illustrative_scenario, no_masking_policy};

    #[test]
    fn uninformative_sensors_give_prior_entropy() {
        let mut sc = illustrative_scenario::<f64>();
        sc.sensors.iter_mut().for_each(|s| s.detection_prob = 0.0);
        let mdp = sc.to_spec().unwrap().build_mask_mdp().unwrap();
        let theta = PolicyParams::zeros(&mdp, ConditioningMode::Augmented);
        let h = exact_conditional_entropy(&mdp, &theta, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((h.value - binary_entropy(2.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn no_masking_entropy_by_hand() {
        // Only the (null, null, null) reading leaves doubt: posterior 0.045/1.045.
        let mdp = illustrative_scenario::<f64>().to_spec().unwrap().build_mask_mdp().unwrap();
        let theta = no_masking_policy(&mdp).unwrap();
        let h = exact_conditional_entropy(&mdp, &theta, DEFAULT_ENUMERATION_CAP).unwrap();
        let expect = (1.045 / 3.0) * binary_entropy(0.045 / 1.045);
        assert!((h.value - expect).abs() < 1e-8, "{} vs {}", h.value, expect);
    }

    #[test]
    fn cap_is_enforced() {
        let mdp = illustrative_scenario::<f64>().to_spec().unwrap().build_mask_mdp().unwrap();
        let theta = PolicyParams::zeros(&mdp, ConditioningMode::Augmented);
        assert!(matches!(
            exact_conditional_entropy(&mdp, &theta, 100),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn clamp_keeps_endpoints_finite() {
        assert!(posterior_entropy(0.0f64).abs() < 1e-11);
        assert!(posterior_entropy(1.0f64).abs() < 1e-11);
        assert!((posterior_entropy(0.5f64) - 1.0).abs() < 1e-12);
    }
}
