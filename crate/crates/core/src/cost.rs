//! Masking-cost value `V(μ0, θ)`: trajectory sampling, exact evaluation by
//! backward induction, and policy gradients (exact and REINFORCE).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::MaskMdp;
use crate::policy::{PolicyParams, PolicyTable};
use crate::scalar::{lit, to_f64, Scalar};

/// One realization of the masked process over the problem horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// `z_0 … z_T`.
    pub aug_states: Vec<usize>,
    /// `σ'_0 … σ'_{T-1}`: the configuration chosen at each decision.
    pub actions: Vec<usize>,
    /// `o_0 … o_T`.
    pub observations: Vec<usize>,
    /// `c_t = 𝒞(z_t, σ'_t)`.
    pub costs: Vec<T>,
    /// `log π_θ(σ'_t | z_t)`.
    pub log_probs: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// `Σ_t γ^t c_t`.
    pub fn discounted_cost(&self, discount: T) -> T {
        let mut g = T::one();
        let mut total = T::zero();
        for &c in &self.costs {
            total += g * c;
            g *= discount;
        }
        total
    }
}

fn sample_index(u: f64, probs: impl Iterator<Item = f64>) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// RNG for trajectory `index` of a batch drawn with `seed`; streams are
/// independent of how the batch is split across threads.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_one<T: Scalar>(mdp: &MaskMdp<T>, table: &PolicyTable<T>, rng: &mut ChaCha8Rng) -> Trajectory<T> {
    let horizon = mdp.horizon();
    let n = mdp.n_aug();
    let mut tr = Trajectory {
        aug_states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        observations: Vec::with_capacity(horizon + 1),
        costs: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
    };
    let mut z = sample_index(rng.random(), mdp.initial().iter().map(|&p| to_f64(p)));
    for t in 0..=horizon {
        tr.aug_states.push(z);
        let o = sample_index(
            rng.random(),
            (0..mdp.n_observations()).map(|o| to_f64(mdp.emission_prob(o, z))),
        );
        tr.observations.push(o);
        if t == horizon {
            break;
        }
        let pi = table.row(z);
        let a = sample_index(rng.random(), pi.iter().map(|&p| to_f64(p)));
        tr.actions.push(a);
        tr.costs.push(mdp.cost(z, a));
        tr.log_probs.push(pi[a].ln());
        let (s, _) = mdp.from_index(z);
        let succ = mdp.successors(s);
        let k = sample_index(rng.random(), succ.iter().map(|&(_, p)| to_f64(p)));
        z = mdp.to_index(succ[k].0, a);
        debug_assert!(z < n);
    }
    tr
}

/// `n` i.i.d. trajectories of the masked process; deterministic given `seed`.
pub fn sample_trajectories<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    n: usize,
    seed: u64,
) -> Vec<Trajectory<T>> {
    let table = policy.table(mdp.n_aug());
    (0..n)
        .into_par_iter()
        .map(|i| sample_one(mdp, &table, &mut trajectory_rng(seed, i as u64)))
        .collect()
}

/// Per-step values `V_t(z)` for `t = 0..=T` (with `V_T ≡ 0`) and action
/// values `Q_t(z, σ)` for `t < T`.
struct Backward<T> {
    values: Vec<Vec<T>>,
    q: Vec<Vec<T>>,
}

fn backward_induction<T: Scalar>(mdp: &MaskMdp<T>, table: &PolicyTable<T>) -> Backward<T> {
    let n = mdp.n_aug();
    let na = mdp.n_actions();
    let horizon = mdp.horizon();
    let gamma = mdp.discount();
    let mut values = vec![vec![T::zero(); n]; horizon + 1];
    let mut q = vec![vec![T::zero(); n * na]; horizon];
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        let cur = &mut head[t];
        // continuation[s, σ'] = Σ_{s'} P(s'|s) V_{t+1}(s', σ')
        let mut cont = vec![T::zero(); n];
        for s in 0..mdp.n_base_states() {
            for &(s2, p) in mdp.successors(s) {
                for a in 0..na {
                    cont[s * na + a] += p * next[s2 * na + a];
                }
            }
        }
        for z in 0..n {
            let s = z / na;
            let mut v = T::zero();
            for (a, &pa) in table.row(z).iter().enumerate() {
                let qa = mdp.cost(z, a) + gamma * cont[s * na + a];
                q[t][z * na + a] = qa;
                v += pa * qa;
            }
            cur[z] = v;
        }
    }
    Backward { values, q }
}

/// `V(μ0, θ) = Σ_{t<T} E[γ^t 𝒞(Z_t, Σ_{t+1})]`, exactly.
pub fn exact_value<T: Scalar>(mdp: &MaskMdp<T>, policy: &PolicyParams<T>) -> T {
    let table = policy.table(mdp.n_aug());
    let bw = backward_induction(mdp, &table);
    mdp.initial().iter().zip(&bw.values[0]).map(|(&m, &v)| m * v).sum()
}

/// Exact `V(μ0, θ)` and `∇_θ V` from state occupancies and action values:
/// `∂V/∂θ[z, σ̃] = Σ_t γ^t d_t(z) π(σ̃|z) (Q_t(z, σ̃) − V_t(z))`.
pub fn exact_value_gradient<T: Scalar>(mdp: &MaskMdp<T>, policy: &PolicyParams<T>) -> (T, Vec<T>) {
    let n = mdp.n_aug();
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let table = policy.table(n);
    let bw = backward_induction(mdp, &table);
    let mut grad = vec![T::zero(); policy.n_params()];
    let mut occ = mdp.initial().to_vec();
    let mut disc = T::one();
    for t in 0..mdp.horizon() {
        for z in 0..n {
            let d = occ[z];
            if d == T::zero() {
                continue;
            }
            let base = policy.row_of(z) * na;
            let v = bw.values[t][z];
            for (a, &pa) in table.row(z).iter().enumerate() {
                grad[base + a] += disc * d * pa * (bw.q[t][z * na + a] - v);
            }
        }
        let mut next = vec![T::zero(); n];
        for z in 0..n {
            if occ[z] == T::zero() {
                continue;
            }
            let s = z / na;
            for (a, &pa) in table.row(z).iter().enumerate() {
                for &(s2, p) in mdp.successors(s) {
                    next[s2 * na + a] += occ[z] * pa * p;
                }
            }
        }
        occ = next;
        disc *= gamma;
    }
    let value = mdp.initial().iter().zip(&bw.values[0]).map(|(&m, &v)| m * v).sum();
    (value, grad)
}

/// Monte-Carlo value estimate and REINFORCE gradient over one batch.
#[derive(Debug, Clone)]
pub struct ValueGradient<T> {
    /// Mean discounted cost of the batch.
    pub value: T,
    pub std_error: T,
    pub grad: Vec<T>,
}

/// Reward-to-go REINFORCE estimate of `∇_θ V(μ0, θ)`:
/// `(1/n) Σ_traj Σ_t ∇log π_θ(σ'_t|z_t) · Σ_{k≥t} γ^k c_k`.
///
/// With `baseline`, the batch mean of each step's reward-to-go is subtracted.
pub fn reinforce_value_gradient<T: Scalar>(
    mdp: &MaskMdp<T>,
    policy: &PolicyParams<T>,
    batch: &[Trajectory<T>],
    baseline: bool,
) -> ValueGradient<T> {
    let gamma = mdp.discount();
    let table = policy.table(mdp.n_aug());
    let n = batch.len();
    let mut grad = vec![T::zero(); policy.n_params()];
    if n == 0 {
        return ValueGradient {
            value: T::zero(),
            std_error: T::zero(),
            grad,
        };
    }
    let nt = lit::<T>(n as f64);
    let to_go: Vec<Vec<T>> = batch
        .iter()
        .map(|tr| {
            let mut out = vec![T::zero(); tr.costs.len()];
            let mut acc = T::zero();
            for t in (0..tr.costs.len()).rev() {
                acc = tr.costs[t] * gamma.powi(t as i32) + acc;
                out[t] = acc;
            }
            out
        })
        .collect();
    let horizon = to_go.iter().map(Vec::len).max().unwrap_or(0);
    let mut step_mean = vec![T::zero(); horizon];
    if baseline {
        for g in &to_go {
            for (m, &x) in step_mean.iter_mut().zip(g) {
                *m += x / nt;
            }
        }
    }
    for (tr, g) in batch.iter().zip(&to_go) {
        for (t, (&z, &a)) in tr.aug_states.iter().zip(&tr.actions).enumerate() {
            let weight = (g[t] - step_mean[t]) / nt;
            if weight != T::zero() {
                policy.accumulate_score(&mut grad, z, a, table.row(z), weight);
            }
        }
    }
    let returns: Vec<T> = to_go.iter().map(|g| g.first().copied().unwrap_or(T::zero())).collect();
    let value = returns.iter().copied().sum::<T>() / nt;
    let std_error = if n > 1 {
        let var = returns.iter().map(|&r| (r - value) * (r - value)).sum::<T>() / lit((n - 1) as f64);
        (var / nt).sqrt()
    } else {
        T::zero()
    };
    ValueGradient { value, std_error, grad }
}
