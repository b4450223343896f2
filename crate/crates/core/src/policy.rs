//! Softmax masking policies and the transition matrix they induce on the
//! masking MDP.

use crate::error::{Error, Result};
use crate::model::MaskMdp;
use crate::scalar::{prob_floor, Scalar};

/// What a policy row is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditioningMode {
    /// One row per augmented state `(s, σ_prev)`.
    #[default]
    Augmented,
    /// One row per base state `s`, shared by every previous configuration.
    StateOnly,
}

impl ConditioningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditioningMode::Augmented => "augmented",
            ConditioningMode::StateOnly => "state_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "augmented" => Some(ConditioningMode::Augmented),
            "state_only" | "state-only" => Some(ConditioningMode::StateOnly),
            _ => None,
        }
    }
}

/// Real parameters `θ[row, σ]` of a softmax mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    theta: Vec<T>,
    n_rows: usize,
    n_actions: usize,
    n_configs: usize,
    mode: ConditioningMode,
}

/// Numerically safe softmax of one row, written into `out`.
pub fn softmax_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

impl<T: Scalar> PolicyParams<T> {
    /// All-zero parameters: the uniform mask.
    pub fn zeros(mdp: &MaskMdp<T>, mode: ConditioningMode) -> Self {
        let n_rows = match mode {
            ConditioningMode::Augmented => mdp.n_aug(),
            ConditioningMode::StateOnly => mdp.n_base_states(),
        };
        PolicyParams {
            theta: vec![T::zero(); n_rows * mdp.n_actions()],
            n_rows,
            n_actions: mdp.n_actions(),
            n_configs: mdp.n_actions(),
            mode,
        }
    }

    pub fn from_theta(mdp: &MaskMdp<T>, mode: ConditioningMode, theta: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(mdp, mode);
        if theta.len() != p.theta.len() {
            return Err(Error::DimensionMismatch {
                what: "policy parameters".into(),
                expected: p.theta.len(),
                found: theta.len(),
            });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("policy parameters must be finite".into()));
        }
        p.theta = theta;
        Ok(p)
    }

    pub fn mode(&self) -> ConditioningMode {
        self.mode
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    /// Parameter row governing augmented state `z`.
    #[inline]
    pub fn row_of(&self, z: usize) -> usize {
        match self.mode {
            ConditioningMode::Augmented => z,
            ConditioningMode::StateOnly => z / self.n_configs,
        }
    }

    /// Augmented states sharing parameter row `row`.
    pub fn states_of_row(&self, row: usize) -> std::ops::Range<usize> {
        match self.mode {
            ConditioningMode::Augmented => row..row + 1,
            ConditioningMode::StateOnly => row * self.n_configs..(row + 1) * self.n_configs,
        }
    }

    #[inline]
    pub fn param_index(&self, row: usize, action: usize) -> usize {
        row * self.n_actions + action
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.theta[row * self.n_actions..(row + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [T] {
        &mut self.theta[row * self.n_actions..(row + 1) * self.n_actions]
    }

    pub fn max_abs(&self) -> T {
        self.theta.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// `π_θ(· | z)`.
    pub fn action_distribution(&self, z: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_actions];
        softmax_into(self.row(self.row_of(z)), &mut out);
        out
    }

    /// `π_θ(σ | z)` for every augmented state, row-major `[z * |Σ| + σ]`.
    pub fn table(&self, n_aug: usize) -> PolicyTable<T> {
        let a = self.n_actions;
        let mut probs = vec![T::zero(); n_aug * a];
        for z in 0..n_aug {
            softmax_into(self.row(self.row_of(z)), &mut probs[z * a..(z + 1) * a]);
        }
        PolicyTable { probs, n_actions: a }
    }

    /// Gradient of `log π_θ(action | z)` over all parameters: the softmax
    /// score `1[σ = action] − π_θ(σ | z)` on the row of `z`, zero elsewhere.
    pub fn log_prob_gradient(&self, z: usize, action: usize) -> Result<Vec<T>> {
        let pi = self.action_distribution(z);
        if pi[action] < prob_floor::<T>() {
            return Err(Error::DegeneratePolicy { state: z, action });
        }
        let mut grad = vec![T::zero(); self.theta.len()];
        let row = self.row_of(z);
        for (s, &p) in pi.iter().enumerate() {
            let ind = if s == action { T::one() } else { T::zero() };
            grad[self.param_index(row, s)] = ind - p;
        }
        Ok(grad)
    }

    /// Adds `scale · ∇ log π_θ(action | z)` into `grad` using a precomputed
    /// distribution for `z`.
    #[inline]
    pub(crate) fn accumulate_score(&self, grad: &mut [T], z: usize, action: usize, pi_z: &[T], scale: T) {
        let base = self.row_of(z) * self.n_actions;
        for (s, &p) in pi_z.iter().enumerate() {
            let ind = if s == action { T::one() } else { T::zero() };
            grad[base + s] += scale * (ind - p);
        }
    }

    /// The induced chain `T_θ` together with its parameter derivatives.
    pub fn induced_transition(&self, mdp: &MaskMdp<T>) -> InducedChain<T> {
        let n = mdp.n_aug();
        let table = self.table(n);
        let mut t = vec![T::zero(); n * n];
        for j in 0..n {
            let (s, _) = mdp.from_index(j);
            for (a, &pa) in table.row(j).iter().enumerate() {
                for &(s2, p) in mdp.successors(s) {
                    t[mdp.to_index(s2, a) * n + j] += p * pa;
                }
            }
        }
        InducedChain {
            n,
            t,
            d_t: self.transition_gradient_with(mdp, &table),
        }
    }

    /// `∂T_θ / ∂θ_p` for every parameter `p`, stored column-sparse.
    pub fn transition_gradient(&self, mdp: &MaskMdp<T>) -> Vec<ParamDerivative<T>> {
        let table = self.table(mdp.n_aug());
        self.transition_gradient_with(mdp, &table)
    }

    fn transition_gradient_with(&self, mdp: &MaskMdp<T>, table: &PolicyTable<T>) -> Vec<ParamDerivative<T>> {
        let n = mdp.n_aug();
        let na = self.n_actions;
        let mut out = Vec::with_capacity(self.theta.len());
        for row in 0..self.n_rows {
            for target in 0..na {
                let mut columns = Vec::new();
                for z in self.states_of_row(row) {
                    let (s, _) = mdp.from_index(z);
                    let pi = table.row(z);
                    let mut col = vec![T::zero(); n];
                    // ∂π(σ|z)/∂θ[z,target] = π(σ|z)(1[σ=target] − π(target|z))
                    for (a, &pa) in pi.iter().enumerate() {
                        let ind = if a == target { T::one() } else { T::zero() };
                        let dpi = pa * (ind - pi[target]);
                        for &(s2, p) in mdp.successors(s) {
                            col[mdp.to_index(s2, a)] += p * dpi;
                        }
                    }
                    columns.push((z, col));
                }
                out.push(ParamDerivative { columns });
            }
        }
        out
    }
}

/// Cached action probabilities for every augmented state.
#[derive(Debug, Clone)]
pub struct PolicyTable<T> {
    probs: Vec<T>,
    n_actions: usize,
}

impl<T: Scalar> PolicyTable<T> {
    #[inline]
    pub fn row(&self, z: usize) -> &[T] {
        &self.probs[z * self.n_actions..(z + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, z: usize, action: usize) -> T {
        self.probs[z * self.n_actions + action]
    }
}

/// Derivative of `T_θ` with respect to one parameter. Only the columns of
/// the augmented states governed by that parameter are nonzero.
#[derive(Debug, Clone)]
pub struct ParamDerivative<T> {
    pub columns: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> ParamDerivative<T> {
    /// Dense `N × N` form, row-major.
    pub fn to_dense(&self, n: usize) -> Vec<T> {
        let mut m = vec![T::zero(); n * n];
        for (j, col) in &self.columns {
            for (i, &v) in col.iter().enumerate() {
                m[i * n + j] = v;
            }
        }
        m
    }
}

/// The observer-side chain: `T_θ[i, j] = 𝐏_θ(Z_{t+1} = i | Z_t = j)`
/// (column-stochastic), plus its per-parameter derivatives.
#[derive(Debug, Clone)]
pub struct InducedChain<T> {
    pub n: usize,
    /// Row-major `[i * n + j]`.
    pub t: Vec<T>,
    pub d_t: Vec<ParamDerivative<T>>,
}

impl<T: Scalar> InducedChain<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.t[i * self.n + j]
    }
}
