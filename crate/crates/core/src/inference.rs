//! Observable-operator inference on the observer-side HMM.
//!
//! Two routes compute the same quantities:
//!
//! * [`OperatorModel`] materializes the dense operators
//!   `A_o = T_θ · diag(B[o, ·])` and evaluates products of them literally.
//!   It is the reference route and is used for small models and checks.
//! * [`SequenceEvaluator`] never forms `T_θ`. It exploits the product
//!   structure of the masking MDP (a policy step followed by a base-chain
//!   step) and works with ratios, so it is cheap and safe against underflow.
//!   The estimators and the optimizer use it.
//!
//! Observation sequences are slices of observation indices `o_0 … o_{L-1}`;
//! a problem with horizon `T` produces sequences of length `L = T + 1`.

use crate::error::{Error, Result};
use crate::model::MaskMdp;
use crate::policy::{InducedChain, PolicyParams, PolicyTable};
use crate::scalar::{lit, prob_floor, Scalar};

const RESCALE_BELOW: f64 = 1e-250;

fn rescale<T: Scalar>(v: &mut [T], log_scale: &mut T) {
    let m = v.iter().copied().fold(T::zero(), T::max);
    if m > T::zero() && m < lit(RESCALE_BELOW) {
        v.iter_mut().for_each(|x| *x /= m);
        *log_scale += m.ln();
    }
}

/// Per-observation operators `A_o^θ` for one policy.
#[derive(Debug, Clone)]
pub struct ObservableOperatorSet<T> {
    n: usize,
    chain: InducedChain<T>,
    emission: Vec<T>,
    ops: Vec<Vec<T>>,
}

impl<T: Scalar> ObservableOperatorSet<T> {
    pub fn new(mdp: &MaskMdp<T>, policy: &PolicyParams<T>) -> Self {
        let n = mdp.n_aug();
        let chain = policy.induced_transition(mdp);
        let ops = (0..mdp.n_observations())
            .map(|o| {
                let b = mdp.emission_row(o);
                let mut a = chain.t.clone();
                for row in a.chunks_mut(n) {
                    row.iter_mut().zip(b).for_each(|(x, &bj)| *x *= bj);
                }
                a
            })
            .collect();
        ObservableOperatorSet {
            n,
            chain,
            emission: mdp.emission_matrix().to_vec(),
            ops,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.chain.d_t.len()
    }

    pub fn chain(&self) -> &InducedChain<T> {
        &self.chain
    }

    /// `A_o`, row-major.
    pub fn op(&self, o: usize) -> &[T] {
        &self.ops[o]
    }

    fn b(&self, o: usize, j: usize) -> T {
        self.emission[o * self.n + j]
    }

    /// `∂A_o / ∂θ_p = (∂T_θ/∂θ_p) · diag(B[o, ·])`, dense row-major.
    pub fn d_op(&self, o: usize, p: usize) -> Vec<T> {
        let mut m = vec![T::zero(); self.n * self.n];
        for (j, col) in &self.chain.d_t[p].columns {
            let bj = self.b(o, *j);
            for (i, &v) in col.iter().enumerate() {
                m[i * self.n + j] = v * bj;
            }
        }
        m
    }

    fn apply(&self, o: usize, v: &[T]) -> Vec<T> {
        self.ops[o]
            .chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(&a, &x)| a * x).sum())
            .collect()
    }

    fn apply_transpose(&self, o: usize, r: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        for (i, row) in self.ops[o].chunks(self.n).enumerate() {
            let ri = r[i];
            if ri != T::zero() {
                out.iter_mut().zip(row).for_each(|(x, &a)| *x += ri * a);
            }
        }
        out
    }
}

/// Posterior of the final-state secret given a full observation sequence.
#[derive(Debug, Clone)]
pub struct SecretPosterior<T> {
    /// `𝐏_θ(W_T = 1 | y)`.
    pub p_secret: T,
    /// `𝐏_θ(y)`.
    pub p_obs: T,
    pub grad_p_secret: Vec<T>,
    pub grad_p_obs: Vec<T>,
}

impl<T: Scalar> SecretPosterior<T> {
    /// `𝐏_θ(W_T = 0 | y)`.
    pub fn p_public(&self) -> T {
        T::one() - self.p_secret
    }

    pub fn grad_p_public(&self) -> Vec<T> {
        self.grad_p_secret.iter().map(|&g| -g).collect()
    }
}

/// Dense observable-operator route bound to one model and policy.
#[derive(Debug, Clone)]
pub struct OperatorModel<'a, T> {
    mdp: &'a MaskMdp<T>,
    ops: ObservableOperatorSet<T>,
}

impl<'a, T: Scalar> OperatorModel<'a, T> {
    pub fn new(mdp: &'a MaskMdp<T>, policy: &PolicyParams<T>) -> Self {
        OperatorModel {
            mdp,
            ops: ObservableOperatorSet::new(mdp, policy),
        }
    }

    pub fn operators(&self) -> &ObservableOperatorSet<T> {
        &self.ops
    }

    /// `A_{o_{t-1}} ⋯ A_{o_0} μ0`, i.e. the vector of `𝐏_θ(o_{0:t-1}, Z_t = i)`.
    pub fn forward(&self, prefix: &[usize]) -> Vec<T> {
        prefix
            .iter()
            .fold(self.mdp.initial().to_vec(), |v, &o| self.ops.apply(o, &v))
    }

    /// `ln 𝐏_θ(y) = ln 1ᵀ A_{o_{L-1}} ⋯ A_{o_0} μ0`, rescaling partial products
    /// that drop below 1e-250.
    pub fn sequence_log_probability(&self, y: &[usize]) -> T {
        let mut log_scale = T::zero();
        let mut v = self.mdp.initial().to_vec();
        for &o in y {
            v = self.ops.apply(o, &v);
            rescale(&mut v, &mut log_scale);
        }
        v.iter().copied().sum::<T>().ln() + log_scale
    }

    /// `𝐏_θ(y)`.
    pub fn sequence_probability(&self, y: &[usize]) -> T {
        self.sequence_log_probability(y).exp()
    }

    /// `𝐏_θ(o_{0:t-1}, Z_t = i) = 1_iᵀ A_{o_{t-1}} ⋯ A_{o_0} μ0`.
    pub fn joint_state_probability(&self, prefix: &[usize], i: usize) -> T {
        self.forward(prefix)[i]
    }

    /// `∇_θ (rᵀ A_{o_{L-1}} ⋯ A_{o_0} μ0)` by the product rule, with cached
    /// prefix vectors and suffix rows.
    fn linear_functional_gradient(&self, r_final: &[T], y: &[usize]) -> Vec<T> {
        let len = y.len();
        let mut prefixes = Vec::with_capacity(len);
        let mut v = self.mdp.initial().to_vec();
        for &o in y {
            prefixes.push(v.clone());
            v = self.ops.apply(o, &v);
        }
        // suffix[k] = r_finalᵀ A_{o_{L-1}} ⋯ A_{o_{k+1}}
        let mut suffixes = vec![Vec::new(); len];
        let mut r = r_final.to_vec();
        for k in (0..len).rev() {
            suffixes[k] = r.clone();
            r = self.ops.apply_transpose(y[k], &r);
        }
        let mut grad = vec![T::zero(); self.ops.n_params()];
        for (p, g) in grad.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in 0..len {
                let o = y[k];
                for (j, col) in &self.ops.chain.d_t[p].columns {
                    let w = self.ops.b(o, *j) * prefixes[k][*j];
                    if w == T::zero() {
                        continue;
                    }
                    let dot: T = col.iter().zip(&suffixes[k]).map(|(&c, &s)| c * s).sum();
                    acc += w * dot;
                }
            }
            *g = acc;
        }
        grad
    }

    /// `∇_θ 𝐏_θ(y)`.
    pub fn sequence_probability_gradient(&self, y: &[usize]) -> Vec<T> {
        let ones = vec![T::one(); self.ops.dim()];
        self.linear_functional_gradient(&ones, y)
    }

    fn secret_row(&self, o_last: usize) -> Vec<T> {
        (0..self.ops.dim())
            .map(|g| {
                if self.mdp.is_secret(g) {
                    self.mdp.emission_prob(o_last, g)
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// `𝐏_θ(W_T = 1 | y)` and `𝐏_θ(y)` with both gradients.
    pub fn secret_posterior(&self, y: &[usize]) -> Result<SecretPosterior<T>> {
        let (&o_last, head) = y.split_last().ok_or(Error::ZeroProbabilityObservation)?;
        let p_obs = self.sequence_probability(y);
        if !(p_obs >= prob_floor::<T>()) {
            return Err(Error::ZeroProbabilityObservation);
        }
        let c = self.secret_row(o_last);
        // N(θ, g) = 𝐏_θ(Z_T = g, o_{0:T-1})
        let joint = self.forward(head);
        let numer: T = c.iter().zip(&joint).map(|(&ci, &ni)| ci * ni).sum();
        let p_secret = numer / p_obs;

        let grad_p_obs = self.sequence_probability_gradient(y);
        let grad_numer = self.linear_functional_gradient(&c, head);
        let denom2 = p_obs * p_obs;
        let grad_p_secret = grad_numer
            .iter()
            .zip(&grad_p_obs)
            .map(|(&gn, &gp)| (gn * p_obs - numer * gp) / denom2)
            .collect();
        Ok(SecretPosterior {
            p_secret,
            p_obs,
            grad_p_secret,
            grad_p_obs,
        })
    }

    /// `∇_θ 𝐏_θ(W_T = 1 | y)`.
    pub fn secret_posterior_gradient(&self, y: &[usize]) -> Result<Vec<T>> {
        Ok(self.secret_posterior(y)?.grad_p_secret)
    }
}

/// Likelihood-side statistics of one observation sequence.
#[derive(Debug, Clone)]
pub struct SequenceStats<T> {
    /// `ln 𝐏_θ(y)`.
    pub log_prob: T,
    /// `𝐏_θ(W_T = 1 | y)`.
    pub p_secret: T,
    /// `∇_θ ln 𝐏_θ(y)`; empty unless gradients were requested.
    pub score: Vec<T>,
    /// `∇_θ 𝐏_θ(W_T = 1 | y)`; empty unless gradients were requested.
    pub grad_p_secret: Vec<T>,
}

/// Structured, ratio-based evaluator of the same quantities as
/// [`OperatorModel`].
///
/// One step of `T_θ` is a policy step `u[s, σ'] = Σ_σ π(σ'|s,σ) v[s,σ]`
/// followed by a base-chain step `(T_θ v)[s', σ'] = Σ_s P(s'|s) u[s, σ']`.
/// Parameter derivatives touch a single column block, so the gradient of
/// `rᵀ T_θ w` with respect to `θ[z, σ̃]` is
/// `w[z] π(σ̃|z) (q[s, σ̃] − Σ_σ π(σ|z) q[s, σ])` with `q[s, σ] = Σ_{s'} P(s'|s) r[s', σ]`.
pub struct SequenceEvaluator<'a, T> {
    mdp: &'a MaskMdp<T>,
    policy: &'a PolicyParams<T>,
    table: PolicyTable<T>,
}

impl<'a, T: Scalar> SequenceEvaluator<'a, T> {
    pub fn new(mdp: &'a MaskMdp<T>, policy: &'a PolicyParams<T>) -> Self {
        SequenceEvaluator {
            mdp,
            policy,
            table: policy.table(mdp.n_aug()),
        }
    }

    pub fn n_params(&self) -> usize {
        self.policy.n_params()
    }

    pub fn policy_table(&self) -> &PolicyTable<T> {
        &self.table
    }

    /// `out = T_θ v`.
    pub(crate) fn step_forward(&self, v: &[T], u: &mut [T], out: &mut [T]) {
        let na = self.mdp.n_actions();
        u.iter_mut().for_each(|x| *x = T::zero());
        for (z, &vz) in v.iter().enumerate() {
            if vz == T::zero() {
                continue;
            }
            let s = z / na;
            for (a, &pa) in self.table.row(z).iter().enumerate() {
                u[s * na + a] += pa * vz;
            }
        }
        out.iter_mut().for_each(|x| *x = T::zero());
        for s in 0..self.mdp.n_base_states() {
            let us = &u[s * na..(s + 1) * na];
            if us.iter().all(|&x| x == T::zero()) {
                continue;
            }
            for &(s2, p) in self.mdp.successors(s) {
                for (a, &ua) in us.iter().enumerate() {
                    out[s2 * na + a] += p * ua;
                }
            }
        }
    }

    /// `q[s, σ] = Σ_{s'} P(s'|s) r[s', σ]`.
    fn base_pullback(&self, r: &[T], q: &mut [T]) {
        let na = self.mdp.n_actions();
        for s in 0..self.mdp.n_base_states() {
            let qs = &mut q[s * na..(s + 1) * na];
            qs.iter_mut().for_each(|x| *x = T::zero());
            for &(s2, p) in self.mdp.successors(s) {
                for (a, x) in qs.iter_mut().enumerate() {
                    *x += p * r[s2 * na + a];
                }
            }
        }
    }

    /// Evaluates one sequence. Gradients are only formed when `with_grad`.
    pub fn evaluate(&self, y: &[usize], with_grad: bool) -> Result<SequenceStats<T>> {
        let n = self.mdp.n_aug();
        let na = self.mdp.n_actions();
        let len = y.len();
        if len == 0 {
            return Err(Error::ZeroProbabilityObservation);
        }

        // Forward: weighted[k] = B[o_k] ⊙ α_k, α_{k+1} = T_θ weighted[k].
        let mut weighted: Vec<Vec<T>> = Vec::with_capacity(len);
        let mut alpha = self.mdp.initial().to_vec();
        let mut u = vec![T::zero(); n];
        let mut next = vec![T::zero(); n];
        let mut log_scale = T::zero();
        for (k, &o) in y.iter().enumerate() {
            let b = self.mdp.emission_row(o);
            let w: Vec<T> = alpha.iter().zip(b).map(|(&a, &bj)| a * bj).collect();
            if k + 1 < len {
                self.step_forward(&w, &mut u, &mut next);
                std::mem::swap(&mut alpha, &mut next);
                rescale(&mut alpha, &mut log_scale);
            }
            weighted.push(w);
        }
        let last = &weighted[len - 1];
        let p_total: T = last.iter().copied().sum();
        if !(p_total >= prob_floor::<T>()) || !p_total.is_finite() {
            return Err(Error::ZeroProbabilityObservation);
        }
        let numer: T = last
            .iter()
            .enumerate()
            .filter(|(z, _)| self.mdp.is_secret(*z))
            .map(|(_, &x)| x)
            .sum();
        let p_secret = numer / p_total;
        let log_prob = p_total.ln() + log_scale;
        if !with_grad {
            return Ok(SequenceStats {
                log_prob,
                p_secret,
                score: Vec::new(),
                grad_p_secret: Vec::new(),
            });
        }

        // Backward rows for 1ᵀ diag(B[o_last]) and for its secret part.
        let b_last = self.mdp.emission_row(y[len - 1]);
        let mut r_obs: Vec<T> = b_last.to_vec();
        let mut r_sec: Vec<T> = b_last
            .iter()
            .enumerate()
            .map(|(z, &x)| if self.mdp.is_secret(z) { x } else { T::zero() })
            .collect();
        let track_secret = numer > T::zero();

        let mut score = vec![T::zero(); self.policy.n_params()];
        let mut grad_log_numer = vec![T::zero(); self.policy.n_params()];
        let mut q_obs = vec![T::zero(); n];
        let mut q_sec = vec![T::zero(); n];
        let mut qbar_obs = vec![T::zero(); n];
        let mut qbar_sec = vec![T::zero(); n];
        let mut scale_obs = T::zero();
        let mut scale_sec = T::zero();

        for k in (0..len - 1).rev() {
            let w = &weighted[k];
            self.base_pullback(&r_obs, &mut q_obs);
            if track_secret {
                self.base_pullback(&r_sec, &mut q_sec);
            }
            let mut denom_obs = T::zero();
            let mut denom_sec = T::zero();
            for z in 0..n {
                let s = z / na;
                let pi = self.table.row(z);
                let qo = &q_obs[s * na..(s + 1) * na];
                qbar_obs[z] = pi.iter().zip(qo).map(|(&p, &q)| p * q).sum();
                denom_obs += w[z] * qbar_obs[z];
                if track_secret {
                    let qs = &q_sec[s * na..(s + 1) * na];
                    qbar_sec[z] = pi.iter().zip(qs).map(|(&p, &q)| p * q).sum();
                    denom_sec += w[z] * qbar_sec[z];
                }
            }
            for z in 0..n {
                let wz = w[z];
                if wz == T::zero() {
                    continue;
                }
                let s = z / na;
                let pi = self.table.row(z);
                let base = self.policy.row_of(z) * na;
                let f_obs = wz / denom_obs;
                for (a, &pa) in pi.iter().enumerate() {
                    score[base + a] += f_obs * pa * (q_obs[s * na + a] - qbar_obs[z]);
                }
                if track_secret && denom_sec > T::zero() {
                    let f_sec = wz / denom_sec;
                    for (a, &pa) in pi.iter().enumerate() {
                        grad_log_numer[base + a] += f_sec * pa * (q_sec[s * na + a] - qbar_sec[z]);
                    }
                }
            }
            // r_k = (r_{k+1}ᵀ T_θ) ⊙ B[o_k]
            let b = self.mdp.emission_row(y[k]);
            for z in 0..n {
                r_obs[z] = qbar_obs[z] * b[z];
                if track_secret {
                    r_sec[z] = qbar_sec[z] * b[z];
                }
            }
            rescale(&mut r_obs, &mut scale_obs);
            if track_secret {
                rescale(&mut r_sec, &mut scale_sec);
            }
        }

        let grad_p_secret = if track_secret {
            grad_log_numer
                .iter()
                .zip(&score)
                .map(|(&gn, &gs)| p_secret * (gn - gs))
                .collect()
        } else {
            vec![T::zero(); self.policy.n_params()]
        };
        Ok(SequenceStats {
            log_prob,
            p_secret,
            score,
            grad_p_secret,
        })
    }
}
