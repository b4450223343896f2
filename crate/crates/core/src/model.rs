//! Hidden Markov models with controllable emission and the masking MDP built
//! on top of them.
//!
//! An [`HmmSpec`] describes the underlying system: a Markov chain over `S`, a
//! set of sensor configurations `Σ`, and an emission table `E(o | s, σ)` that
//! depends on the configuration in force. [`MaskMdp`] is the product over
//! augmented states `z = (s, σ)` in which a masking action picks the next
//! configuration.
//!
//! Time convention: `horizon` counts transitions. A trajectory visits
//! `horizon + 1` augmented states `z_0 … z_T`, emits one observation at each
//! of them, and takes `horizon` masking decisions (one per transition).

use crate::error::{Error, Result};
use crate::scalar::{lit, renorm_tol, stochastic_tol, to_f64, Scalar};

/// An HMM with controllable emission plus the masking problem posed on it.
#[derive(Debug, Clone)]
pub struct HmmSpec<T> {
    pub states: Vec<String>,
    pub observations: Vec<String>,
    pub mask_actions: Vec<String>,
    /// `transition[s][s'] = P(s' | s)`.
    pub transition: Vec<Vec<T>>,
    /// `emission[s][σ][o] = E(o | s, σ)`.
    pub emission: Vec<Vec<Vec<T>>>,
    pub initial_dist: Vec<T>,
    pub initial_config: usize,
    /// Secret states `G`, as indices into `states`.
    pub secret: Vec<usize>,
    /// `mask_cost[s][σ][σ'] = C(s, σ, σ')`.
    pub mask_cost: Vec<Vec<Vec<T>>>,
    pub horizon: usize,
    pub discount: T,
    pub budget: T,
    /// The configuration that masks nothing, when there is one.
    pub null_action: Option<usize>,
}

fn check_row<T: Scalar>(row: &mut [T], table: &'static str, label: impl FnOnce() -> String) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < T::zero()) {
        return Err(Error::InvalidProbability { table, row: label() });
    }
    let sum: T = row.iter().copied().sum();
    let dev = (sum - T::one()).abs();
    if dev <= stochastic_tol::<T>() {
        return Ok(());
    }
    if dev <= renorm_tol::<T>() {
        row.iter_mut().for_each(|p| *p /= sum);
        return Ok(());
    }
    Err(Error::NonStochasticRow {
        table,
        row: label(),
        sum: to_f64(sum),
    })
}

fn expect_len(what: impl FnOnce() -> String, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what: what(),
            expected,
            found,
        });
    }
    Ok(())
}

impl<T: Scalar> HmmSpec<T> {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.mask_actions.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn is_secret(&self, s: usize) -> bool {
        self.secret.contains(&s)
    }

    /// Checks every structural invariant and returns the (possibly
    /// renormalized) spec.
    ///
    /// Rows within 1e-9 of stochastic are renormalized; anything further off
    /// is rejected. An empty secret set is accepted with a warning, since the
    /// conditional entropy is then identically zero.
    pub fn validate(mut self) -> Result<Self> {
        let ns = self.n_states();
        let na = self.n_actions();
        let no = self.n_observations();
        if ns == 0 || na == 0 || no == 0 {
            return Err(Error::InvalidParameter(
                "states, mask actions and observations must be non-empty".into(),
            ));
        }

        expect_len(|| "transition rows".into(), ns, self.transition.len())?;
        for (s, row) in self.transition.iter_mut().enumerate() {
            expect_len(|| format!("transition row {}", self.states[s]), ns, row.len())?;
            let label = self.states[s].clone();
            check_row(row, "transition", || label)?;
        }

        expect_len(|| "emission rows".into(), ns, self.emission.len())?;
        for (s, per_state) in self.emission.iter_mut().enumerate() {
            expect_len(|| format!("emission configs for {}", self.states[s]), na, per_state.len())?;
            for (a, row) in per_state.iter_mut().enumerate() {
                expect_len(|| format!("emission row ({}, {})", self.states[s], self.mask_actions[a]), no, row.len())?;
                let label = format!("({}, {})", self.states[s], self.mask_actions[a]);
                check_row(row, "emission", || label)?;
            }
        }

        expect_len(|| "initial distribution".into(), ns, self.initial_dist.len())?;
        check_row(&mut self.initial_dist, "initial", || "initial distribution".into())?;

        if self.initial_config >= na {
            return Err(Error::IndexOutOfRange {
                what: "initial configuration",
                index: self.initial_config,
                bound: na,
            });
        }
        if let Some(n) = self.null_action {
            if n >= na {
                return Err(Error::IndexOutOfRange {
                    what: "null action",
                    index: n,
                    bound: na,
                });
            }
        }
        self.secret.sort_unstable();
        self.secret.dedup();
        if let Some(&g) = self.secret.iter().find(|&&g| g >= ns) {
            return Err(Error::IndexOutOfRange {
                what: "secret state",
                index: g,
                bound: ns,
            });
        }
        if self.secret.is_empty() {
            log::warn!("secret set is empty; conditional entropy is identically zero");
        }

        expect_len(|| "cost rows".into(), ns, self.mask_cost.len())?;
        for (s, per_state) in self.mask_cost.iter().enumerate() {
            expect_len(|| format!("cost configs for {}", self.states[s]), na, per_state.len())?;
            for (a, row) in per_state.iter().enumerate() {
                expect_len(|| format!("cost row ({}, {})", self.states[s], self.mask_actions[a]), na, row.len())?;
                for (b, &c) in row.iter().enumerate() {
                    if !c.is_finite() || c < T::zero() {
                        return Err(Error::NegativeCost {
                            state: self.states[s].clone(),
                            from: self.mask_actions[a].clone(),
                            to: self.mask_actions[b].clone(),
                            value: to_f64(c),
                        });
                    }
                }
            }
        }

        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(self.discount >= T::zero() && self.discount <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in [0, 1], got {}",
                self.discount
            )));
        }
        if !(self.budget >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "budget must be non-negative, got {}",
                self.budget
            )));
        }
        Ok(self)
    }

    /// Builds the masking MDP over augmented states `(s, σ)`. Validates first.
    pub fn build_mask_mdp(&self) -> Result<MaskMdp<T>> {
        let spec = self.clone().validate()?;
        Ok(MaskMdp::from_validated(spec))
    }
}

/// Display names attached to a [`MaskMdp`], used for file I/O.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
}

/// The masking MDP over `Z = S × Σ`.
///
/// Augmented state `z = (s, σ)` has index `s * |Σ| + σ`. The transition under
/// action `σ°` moves to `(s', σ°)` with probability `P(s' | s)`, so it is stored
/// through the base chain's successor lists.
#[derive(Debug, Clone)]
pub struct MaskMdp<T> {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    successors: Vec<Vec<(usize, T)>>,
    /// Observation-by-state matrix, row-major `[o * N + z]`.
    emission: Vec<T>,
    /// `[z * |Σ| + σ']`.
    cost: Vec<T>,
    initial: Vec<T>,
    secret_aug: Vec<bool>,
    horizon: usize,
    discount: T,
    budget: T,
    null_action: Option<usize>,
    labels: Labels,
}

impl<T: Scalar> MaskMdp<T> {
    fn from_validated(spec: HmmSpec<T>) -> Self {
        let ns = spec.n_states();
        let na = spec.n_actions();
        let no = spec.n_observations();
        let n = ns * na;

        let successors = spec
            .transition
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > T::zero())
                    .map(|(s2, &p)| (s2, p))
                    .collect()
            })
            .collect();

        let mut emission = vec![T::zero(); no * n];
        let mut cost = vec![T::zero(); n * na];
        let mut secret_aug = vec![false; n];
        for s in 0..ns {
            for a in 0..na {
                let z = s * na + a;
                for o in 0..no {
                    emission[o * n + z] = spec.emission[s][a][o];
                }
                cost[z * na..(z + 1) * na].copy_from_slice(&spec.mask_cost[s][a]);
                secret_aug[z] = spec.is_secret(s);
            }
        }
        let mut initial = vec![T::zero(); n];
        for s in 0..ns {
            initial[s * na + spec.initial_config] = spec.initial_dist[s];
        }

        MaskMdp {
            n_states: ns,
            n_actions: na,
            n_obs: no,
            successors,
            emission,
            cost,
            initial,
            secret_aug,
            horizon: spec.horizon,
            discount: spec.discount,
            budget: spec.budget,
            null_action: spec.null_action,
            labels: Labels {
                states: spec.states,
                actions: spec.mask_actions,
                observations: spec.observations,
            },
        }
    }

    /// Number of augmented states `N = |S|·|Σ|`.
    #[inline]
    pub fn n_aug(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn n_base_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn n_observations(&self) -> usize {
        self.n_obs
    }

    #[inline]
    pub fn to_index(&self, s: usize, config: usize) -> usize {
        s * self.n_actions + config
    }

    #[inline]
    pub fn from_index(&self, z: usize) -> (usize, usize) {
        (z / self.n_actions, z % self.n_actions)
    }

    /// Successors `(s', P(s'|s))` of base state `s`, zero entries omitted.
    #[inline]
    pub fn successors(&self, s: usize) -> &[(usize, T)] {
        &self.successors[s]
    }

    /// `𝐏(z' | z, action)`.
    pub fn transition_prob(&self, z: usize, action: usize, z_next: usize) -> T {
        let (s, _) = self.from_index(z);
        let (s2, c2) = self.from_index(z_next);
        if c2 != action {
            return T::zero();
        }
        self.successors[s]
            .iter()
            .find(|(t, _)| *t == s2)
            .map_or(T::zero(), |&(_, p)| p)
    }

    /// `𝐄(o | z)`.
    #[inline]
    pub fn emission_prob(&self, o: usize, z: usize) -> T {
        self.emission[o * self.n_aug() + z]
    }

    /// Row `o` of the emission matrix: `B[o, ·]`.
    #[inline]
    pub fn emission_row(&self, o: usize) -> &[T] {
        let n = self.n_aug();
        &self.emission[o * n..(o + 1) * n]
    }

    /// The observation-by-state matrix `B` (row-major, `M × N`).
    pub fn emission_matrix(&self) -> &[T] {
        &self.emission
    }

    /// `𝒞(z, σ')`.
    #[inline]
    pub fn cost(&self, z: usize, action: usize) -> T {
        self.cost[z * self.n_actions + action]
    }

    pub fn cost_row(&self, z: usize) -> &[T] {
        &self.cost[z * self.n_actions..(z + 1) * self.n_actions]
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    #[inline]
    pub fn is_secret(&self, z: usize) -> bool {
        self.secret_aug[z]
    }

    pub fn secret_mask(&self) -> &[bool] {
        &self.secret_aug
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Observation sequence length, `horizon + 1`.
    pub fn sequence_len(&self) -> usize {
        self.horizon + 1
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn budget(&self) -> T {
        self.budget
    }

    pub fn null_action(&self) -> Option<usize> {
        self.null_action
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Returns a copy with different problem parameters (same dynamics).
    pub fn with_problem(mut self, horizon: usize, discount: T, budget: T) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(discount >= T::zero() && discount <= T::one()) {
            return Err(Error::InvalidParameter(format!("discount must lie in [0, 1], got {discount}")));
        }
        if !(budget >= T::zero()) {
            return Err(Error::InvalidParameter(format!("budget must be non-negative, got {budget}")));
        }
        self.horizon = horizon;
        self.discount = discount;
        self.budget = budget;
        Ok(self)
    }

    /// Dense `N × N` transition matrix for a fixed action, row `z`, column `z'`.
    pub fn transition_matrix(&self, action: usize) -> Vec<T> {
        let n = self.n_aug();
        let mut m = vec![T::zero(); n * n];
        for z in 0..n {
            let (s, _) = self.from_index(z);
            for &(s2, p) in &self.successors[s] {
                m[z * n + self.to_index(s2, action)] = p;
            }
        }
        m
    }

    /// Prior probability that the final state is secret, `𝐏(W_T = 1)`.
    pub fn secret_prior(&self) -> T {
        let mut dist: Vec<T> = (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.initial[self.to_index(s, a)]).sum())
            .collect();
        for _ in 0..self.horizon {
            let mut next = vec![T::zero(); self.n_states];
            for (s, &m) in dist.iter().enumerate() {
                for &(s2, p) in &self.successors[s] {
                    next[s2] += m * p;
                }
            }
            dist = next;
        }
        (0..self.n_states)
            .filter(|&s| self.secret_aug[self.to_index(s, 0)])
            .map(|s| dist[s])
            .sum()
    }
}

/// Binary entropy in bits; `0 · log 0 := 0`.
pub fn binary_entropy<T: Scalar>(p: T) -> T {
    let term = |q: T| if q > T::zero() { -q * q.log2() } else { T::zero() };
    term(p) + term(T::one() - p)
}

/// Uniform distribution helper for builders.
pub fn uniform<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / lit(n as f64); n]
}
