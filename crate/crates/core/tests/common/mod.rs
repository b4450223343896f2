//! Shared test fixtures: random small models and a brute-force oracle that
//! sums over explicit state/configuration paths.

#![allow(dead_code)]

use maskopt::policy::ConditioningMode;
use maskopt::{HmmSpec, MaskMdp, PolicyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub states: usize,
    pub configs: usize,
    pub obs: usize,
    pub horizon: usize,
}

impl Dims {
    /// Sizes in the ranges 3–8 states, 2–4 configurations, 2–4 observations,
    /// horizon 2–4.
    pub fn random(rng: &mut impl Rng) -> Dims {
        Dims {
            states: rng.random_range(3..=8),
            configs: rng.random_range(2..=4),
            obs: rng.random_range(2..=4),
            horizon: rng.random_range(2..=4),
        }
    }
}

fn random_row(rng: &mut impl Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(sparsity) { 0.0 } else { rng.random_range(0.05..1.0) })
        .collect();
    if row.iter().all(|&p| p == 0.0) {
        row[rng.random_range(0..n)] = 1.0;
    }
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    row
}

/// A random HMM with controllable emission. Transition rows are sparse,
/// emission rows dense, costs in `[0, 10)`.
pub fn random_spec(seed: u64, d: Dims) -> HmmSpec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = (0..d.states).map(|_| random_row(&mut rng, d.states, 0.3)).collect();
    let emission = (0..d.states)
        .map(|_| (0..d.configs).map(|_| random_row(&mut rng, d.obs, 0.0)).collect())
        .collect();
    let mask_cost = (0..d.states)
        .map(|_| {
            (0..d.configs)
                .map(|_| (0..d.configs).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect()
        })
        .collect();
    let n_secret = rng.random_range(1..d.states);
    let mut secret: Vec<usize> = (0..d.states).collect();
    for i in (1..secret.len()).rev() {
        secret.swap(i, rng.random_range(0..=i));
    }
    secret.truncate(n_secret);
    secret.sort_unstable();
    HmmSpec {
        states: (0..d.states).map(|s| format!("s{s}")).collect(),
        observations: (0..d.obs).map(|o| format!("o{o}")).collect(),
        mask_actions: (0..d.configs).map(|a| format!("c{a}")).collect(),
        transition,
        emission,
        initial_dist: random_row(&mut rng, d.states, 0.4),
        initial_config: rng.random_range(0..d.configs),
        secret,
        mask_cost,
        horizon: d.horizon,
        discount: if rng.random_bool(0.5) { 1.0 } else { 0.9 },
        budget: 10.0,
        null_action: Some(0),
    }
}

pub fn random_theta(mdp: &MaskMdp<f64>, mode: ConditioningMode, seed: u64) -> PolicyParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A);
    let n = PolicyParams::zeros(mdp, mode).n_params();
    let theta = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    PolicyParams::from_theta(mdp, mode, theta).unwrap()
}

/// One random model with a random policy, either conditioning mode.
pub fn random_case(seed: u64) -> (HmmSpec<f64>, MaskMdp<f64>, PolicyParams<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Dims::random(&mut rng);
    let spec = random_spec(rng.random(), d);
    let mdp = spec.build_mask_mdp().unwrap();
    let mode = if rng.random_bool(0.7) {
        ConditioningMode::Augmented
    } else {
        ConditioningMode::StateOnly
    };
    let theta = random_theta(&mdp, mode, rng.random());
    (spec, mdp, theta)
}

/// Brute-force quantities for a fixed list of observation sequences.
#[derive(Debug, Clone)]
pub struct PathSums {
    /// `P(y)` per sequence.
    pub p_obs: Vec<f64>,
    /// `P(y, S_T ∈ G)` per sequence.
    pub p_obs_secret: Vec<f64>,
    /// `joint[k][t][z] = P(y_k[0..t], Z_t = z)`, `t = 0..=T`.
    pub joint: Vec<Vec<Vec<f64>>>,
    /// Expected discounted masking cost.
    pub value: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

struct Walker<'a> {
    spec: &'a HmmSpec<f64>,
    pi: Vec<Vec<f64>>,
    ys: &'a [Vec<usize>],
    out: PathSums,
}

impl Walker<'_> {
    fn visit(&mut self, t: usize, s: usize, c: usize, p: f64, weights: &[f64], cost: f64) {
        let na = self.spec.mask_actions.len();
        let z = s * na + c;
        let mut next = Vec::with_capacity(weights.len());
        for (k, &w) in weights.iter().enumerate() {
            self.out.joint[k][t][z] += p * w;
            next.push(w * self.spec.emission[s][c][self.ys[k][t]]);
        }
        if t == self.spec.horizon {
            let secret = self.spec.secret.contains(&s);
            for (k, &w) in next.iter().enumerate() {
                self.out.p_obs[k] += p * w;
                if secret {
                    self.out.p_obs_secret[k] += p * w;
                }
            }
            self.out.value += p * cost;
            return;
        }
        let gamma_t = self.spec.discount.powi(t as i32);
        for a in 0..na {
            let pa = self.pi[z][a];
            let step = gamma_t * self.spec.mask_cost[s][c][a];
            for s2 in 0..self.spec.states.len() {
                let ps = self.spec.transition[s][s2];
                if ps == 0.0 || pa == 0.0 {
                    continue;
                }
                self.visit(t + 1, s2, a, p * pa * ps, &next, cost + step);
            }
        }
    }
}

/// Enumerates every path `z_0 … z_T` with its masking decisions.
pub fn path_sums(spec: &HmmSpec<f64>, policy: &PolicyParams<f64>, ys: &[Vec<usize>]) -> PathSums {
    let na = spec.mask_actions.len();
    let n = spec.states.len() * na;
    let pi = (0..n).map(|z| softmax(policy.row(policy.row_of(z)))).collect();
    let len = spec.horizon + 1;
    let mut w = Walker {
        spec,
        pi,
        ys,
        out: PathSums {
            p_obs: vec![0.0; ys.len()],
            p_obs_secret: vec![0.0; ys.len()],
            joint: vec![vec![vec![0.0; n]; len]; ys.len()],
            value: 0.0,
        },
    };
    let ones = vec![1.0; ys.len()];
    for s in 0..spec.states.len() {
        let p0 = spec.initial_dist[s];
        if p0 > 0.0 {
            w.visit(0, s, spec.initial_config, p0, &ones, 0.0);
        }
    }
    w.out
}

/// Every sequence in `O^L`.
pub fn all_sequences(n_obs: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|y| {
                (0..n_obs).map(move |o| {
                    let mut y2 = y.clone();
                    y2.push(o);
                    y2
                })
            })
            .collect();
    }
    out
}

/// `−Σ_w p log₂ p` without clamping.
pub fn plain_binary_entropy(p: f64) -> f64 {
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum()
}

/// Richardson-extrapolated central difference of `f` at 0.
pub fn derivative(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    let d1 = (f(h) - f(-h)) / (2.0 * h);
    let d2 = (f(h / 2.0) - f(-h / 2.0)) / h;
    (4.0 * d2 - d1) / 3.0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn shifted(policy: &PolicyParams<f64>, d: &[f64], s: f64) -> PolicyParams<f64> {
    let mut p = policy.clone();
    for (x, di) in p.theta_mut().iter_mut().zip(d) {
        *x += s * di;
    }
    p
}

pub fn unit_direction(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.iter().map(|x| x / norm).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleErrors {
    pub sequence: f64,
    pub joint: f64,
    pub posterior: f64,
    pub value: f64,
    /// `|Σ_{y ∈ O^L} P(y) − 1|`.
    pub total: f64,
}

impl OracleErrors {
    pub fn max(self, o: OracleErrors) -> OracleErrors {
        OracleErrors {
            sequence: self.sequence.max(o.sequence),
            joint: self.joint.max(o.joint),
            posterior: self.posterior.max(o.posterior),
            value: self.value.max(o.value),
            total: self.total.max(o.total),
        }
    }
}

/// Operator-based quantities against [`path_sums`] on sampled and arbitrary
/// sequences of one random case.
pub fn oracle_errors(seed: u64) -> OracleErrors {
    use maskopt::{exact_value, sample_trajectories, OperatorModel};
    let (spec, mdp, policy) = random_case(seed);
    let len = mdp.sequence_len();
    let mut ys: Vec<Vec<usize>> = sample_trajectories(&mdp, &policy, 6, seed)
        .into_iter()
        .map(|t| t.observations)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for _ in 0..3 {
        ys.push((0..len).map(|_| rng.random_range(0..mdp.n_observations())).collect());
    }
    let bf = path_sums(&spec, &policy, &ys);
    let om = OperatorModel::new(&mdp, &policy);
    let mut e = OracleErrors::default();
    for (k, y) in ys.iter().enumerate() {
        e.sequence = e.sequence.max((om.sequence_probability(y) - bf.p_obs[k]).abs());
        for t in 0..=mdp.horizon() {
            for z in 0..mdp.n_aug() {
                e.joint = e.joint.max((om.joint_state_probability(&y[..t], z) - bf.joint[k][t][z]).abs());
            }
        }
        if bf.p_obs[k] > 1e-9 {
            let post = om.secret_posterior(y).unwrap();
            e.posterior = e.posterior.max((post.p_secret - bf.p_obs_secret[k] / bf.p_obs[k]).abs());
        }
    }
    e.value = (exact_value(&mdp, &policy) - bf.value).abs();
    let total: f64 = all_sequences(mdp.n_observations(), len)
        .iter()
        .map(|y| om.sequence_probability(y))
        .sum();
    e.total = (total - 1.0).abs();
    e
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientErrors {
    pub sequence: f64,
    pub posterior: f64,
    pub value: f64,
    pub entropy: f64,
}

impl GradientErrors {
    pub fn max(self, o: GradientErrors) -> GradientErrors {
        GradientErrors {
            sequence: self.sequence.max(o.sequence),
            posterior: self.posterior.max(o.posterior),
            value: self.value.max(o.value),
            entropy: self.entropy.max(o.entropy),
        }
    }

    pub fn worst(&self) -> f64 {
        self.sequence.max(self.posterior).max(self.value).max(self.entropy)
    }
}

pub const FD_STEP: f64 = 4e-3;

/// Analytic directional derivatives against finite differences for one
/// random case, along two random directions.
pub fn gradient_errors(seed: u64) -> GradientErrors {
    use maskopt::{
        exact_conditional_entropy, exact_entropy_gradient, exact_value, exact_value_gradient, sample_trajectories,
        OperatorModel, DEFAULT_ENUMERATION_CAP,
    };
    let (_, mdp, policy) = random_case(seed);
    let cap = DEFAULT_ENUMERATION_CAP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let n = policy.n_params();
    let om = OperatorModel::new(&mdp, &policy);
    let mut e = GradientErrors::default();
    for traj in sample_trajectories(&mdp, &policy, 2, seed) {
        let y = traj.observations;
        let d = unit_direction(n, &mut rng);
        let post = om.secret_posterior(&y).unwrap();
        let fd = derivative(|s| OperatorModel::new(&mdp, &shifted(&policy, &d, s)).sequence_probability(&y), FD_STEP);
        e.sequence = e.sequence.max(rel_err(dot(&post.grad_p_obs, &d), fd));
        let fd = derivative(
            |s| {
                OperatorModel::new(&mdp, &shifted(&policy, &d, s))
                    .secret_posterior(&y)
                    .unwrap()
                    .p_secret
            },
            FD_STEP,
        );
        e.posterior = e.posterior.max(rel_err(dot(&post.grad_p_secret, &d), fd));
    }
    let (_, gv) = exact_value_gradient(&mdp, &policy);
    let (_, gh) = exact_entropy_gradient(&mdp, &policy, cap).unwrap();
    for _ in 0..2 {
        let d = unit_direction(n, &mut rng);
        let fd = derivative(|s| exact_value(&mdp, &shifted(&policy, &d, s)), FD_STEP);
        e.value = e.value.max(rel_err(dot(&gv, &d), fd));
        let fd = derivative(
            |s| exact_conditional_entropy(&mdp, &shifted(&policy, &d, s), cap).unwrap().value,
            FD_STEP,
        );
        e.entropy = e.entropy.max(rel_err(dot(&gh, &d), fd));
    }
    e
}
