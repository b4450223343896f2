//! Primal-dual policy synthesis: gradient ascent on
//! `L(θ, λ) = H(W_T|Y; θ) + λ(ε − V(μ0, θ))` in `θ` and projected descent in
//! `λ ≥ 0`.

use std::fmt::Write as _;
use std::time::Instant;

use crate::cost::{exact_value_gradient, reinforce_value_gradient, sample_trajectories};
use crate::entropy::{exact_entropy_gradient, sampled_entropy_gradient, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::model::MaskMdp;
use crate::policy::PolicyParams;
use crate::scalar::{lit, to_f64, Scalar};

/// How gradients are estimated each update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Sampled entropy gradient and REINFORCE value gradient.
    #[default]
    Sampled,
    /// Exact enumeration for entropy and backward induction for the value.
    /// Only for models under the enumeration cap; ignores batch settings.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig<T> {
    pub iterations: usize,
    /// Trajectories sampled per iteration, across all mini-batches.
    pub batch_size: usize,
    /// Sequential `θ` updates per iteration, each on a fresh on-policy mini-batch.
    pub batches_per_iter: usize,
    pub eta: T,
    pub kappa: T,
    pub lambda0: T,
    pub seed: u64,
    /// `DivergedParameters` once `‖θ‖∞` exceeds this.
    pub divergence_bound: T,
    /// Stop once the mean absolute Lagrangian change over this many
    /// iterations drops below `early_stop_tol`.
    pub early_stop_window: Option<usize>,
    pub early_stop_tol: T,
    /// Subtract the per-step mean reward-to-go in REINFORCE.
    pub value_baseline: bool,
    pub estimator: Estimator,
    /// Record wall-clock seconds in the trace (zeros otherwise, which makes
    /// traces byte-reproducible).
    pub record_timing: bool,
}

impl<T: Scalar> Default for SynthesisConfig<T> {
    fn default() -> Self {
        SynthesisConfig {
            iterations: 1000,
            batch_size: 1500,
            batches_per_iter: 1,
            eta: T::one(),
            kappa: lit(2e-4),
            lambda0: T::zero(),
            seed: 0,
            divergence_bound: lit(1e4),
            early_stop_window: None,
            early_stop_tol: lit(1e-4),
            value_baseline: true,
            estimator: Estimator::Sampled,
            record_timing: true,
        }
    }
}

impl<T: Scalar> SynthesisConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.eta > T::zero()) || !(self.kappa > T::zero()) {
            return bad("step sizes eta and kappa must be positive");
        }
        if !(self.lambda0 >= T::zero()) {
            return bad("initial multiplier must be non-negative");
        }
        if self.estimator == Estimator::Sampled
            && self.iterations > 0
            && (self.batches_per_iter == 0 || self.batch_size < self.batches_per_iter)
        {
            return bad("batch size must be at least the number of mini-batches (and both positive)");
        }
        if !(self.divergence_bound > T::zero()) {
            return bad("divergence bound must be positive");
        }
        if self.early_stop_window == Some(0) {
            return bad("early-stop window must be positive");
        }
        Ok(())
    }
}

/// `H + λ(ε − V)`.
pub fn lagrangian<T: Scalar>(entropy: T, value: T, lambda: T, epsilon: T) -> T {
    entropy + lambda * (epsilon - value)
}

/// One row of a [`SynthesisTrace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub iter: usize,
    /// Bits, averaged over the iteration's mini-batches.
    pub entropy: T,
    /// Expected discounted cost, averaged over the iteration's mini-batches.
    pub value: T,
    /// Multiplier after the iteration's dual update.
    pub lambda: T,
    /// Mean L2 norm of the primal gradient `∇H − λ∇V` over mini-batches.
    pub grad_norm: T,
    /// Seconds since the start of synthesis.
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthesisTrace<T> {
    pub rows: Vec<TraceRow<T>>,
}

pub const TRACE_HEADER: &str = "iter,entropy,value,lambda,grad_norm,wall_s";

impl<T: Scalar> SynthesisTrace<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow<T>> {
        self.rows.last()
    }

    fn push(&mut self, row: TraceRow<T>) {
        debug_assert!(self.rows.last().is_none_or(|r| r.iter < row.iter));
        self.rows.push(row);
    }

    /// Comma-separated text with a header line. Numbers use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter,
                to_f64(r.entropy),
                to_f64(r.value),
                to_f64(r.lambda),
                to_f64(r.grad_norm),
                r.wall_s
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => return Err(Error::TraceFormat(format!("line 1: expected header `{TRACE_HEADER}`"))),
        }
        let mut trace = SynthesisTrace::default();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| Error::TraceFormat(format!("line {}: {m}", i + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(err("expected 6 fields"));
            }
            let num = |k: usize| -> Result<f64> {
                let v: f64 = fields[k].parse().map_err(|_| err("invalid number"))?;
                if v.is_nan() {
                    return Err(err("NaN entry"));
                }
                Ok(v)
            };
            let iter: usize = fields[0].parse().map_err(|_| err("invalid iteration index"))?;
            if trace.rows.last().is_some_and(|r: &TraceRow<T>| r.iter >= iter) {
                return Err(err("iteration indices must strictly increase"));
            }
            trace.rows.push(TraceRow {
                iter,
                entropy: lit(num(1)?),
                value: lit(num(2)?),
                lambda: lit(num(3)?),
                grad_norm: lit(num(4)?),
                wall_s: num(5)?,
            });
        }
        Ok(trace)
    }
}

/// Optimizer state between updates.
#[derive(Debug, Clone)]
pub struct LagrangianState<T> {
    pub theta: PolicyParams<T>,
    pub lambda: T,
    pub iteration: usize,
    pub eta: T,
    pub kappa: T,
    pub epsilon: T,
    pub divergence_bound: T,
}

impl<T: Scalar> LagrangianState<T> {
    pub fn new(theta: PolicyParams<T>, config: &SynthesisConfig<T>, epsilon: T) -> Self {
        LagrangianState {
            theta,
            lambda: config.lambda0,
            iteration: 0,
            eta: config.eta,
            kappa: config.kappa,
            epsilon,
            divergence_bound: config.divergence_bound,
        }
    }

    /// `θ ← θ + η(∇H − λ∇V)`; returns `‖∇H − λ∇V‖₂`.
    pub fn primal_step(&mut self, entropy_grad: &[T], value_grad: &[T]) -> Result<T> {
        let mut norm2 = T::zero();
        for ((th, &gh), &gv) in self.theta.theta_mut().iter_mut().zip(entropy_grad).zip(value_grad) {
            let g = gh - self.lambda * gv;
            norm2 += g * g;
            *th += self.eta * g;
        }
        let max_abs = self.theta.max_abs();
        if !(max_abs <= self.divergence_bound) {
            return Err(Error::DivergedParameters {
                iteration: self.iteration,
                max_abs: to_f64(max_abs),
            });
        }
        Ok(norm2.sqrt())
    }

    /// `λ ← max(0, λ − κ(ε − V))`.
    pub fn dual_step(&mut self, value_estimate: T) {
        self.lambda = (self.lambda - self.kappa * (self.epsilon - value_estimate)).max(T::zero());
    }

    /// A full primal-dual update from one set of estimates.
    pub fn step(&mut self, entropy_grad: &[T], value_grad: &[T], value_estimate: T) -> Result<T> {
        let norm = self.primal_step(entropy_grad, value_grad)?;
        self.dual_step(value_estimate);
        self.iteration += 1;
        Ok(norm)
    }
}

/// Result of a completed synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisRun<T> {
    pub policy: PolicyParams<T>,
    pub lambda: T,
    pub trace: SynthesisTrace<T>,
    pub stopped_early: bool,
}

/// A failed run with the trace recorded up to the failure.
#[derive(Debug)]
pub struct SynthesisFailure<T> {
    pub error: Error,
    pub trace: SynthesisTrace<T>,
}

impl<T> std::fmt::Display for SynthesisFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} trace rows)", self.error, self.trace.rows.len())
    }
}

impl<T: std::fmt::Debug> std::error::Error for SynthesisFailure<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Seed for mini-batch `b` of iteration `k` (splitmix64 finalizer).
pub fn batch_seed(seed: u64, iteration: usize, batch: usize) -> u64 {
    let mut x = seed ^ ((iteration as u64) << 20 | batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct Estimates<T> {
    entropy: T,
    value: T,
    entropy_grad: Vec<T>,
    value_grad: Vec<T>,
}

fn estimate<T: Scalar>(
    mdp: &MaskMdp<T>,
    theta: &PolicyParams<T>,
    config: &SynthesisConfig<T>,
    size: usize,
    seed: u64,
) -> Result<Estimates<T>> {
    match config.estimator {
        Estimator::Exact => {
            let (h, entropy_grad) = exact_entropy_gradient(mdp, theta, DEFAULT_ENUMERATION_CAP)?;
            let (value, value_grad) = exact_value_gradient(mdp, theta);
            Ok(Estimates {
                entropy: h.value,
                value,
                entropy_grad,
                value_grad,
            })
        }
        Estimator::Sampled => {
            let batch = sample_trajectories(mdp, theta, size, seed);
            let observations: Vec<Vec<usize>> = batch.iter().map(|t| t.observations.clone()).collect();
            let (h, entropy_grad) = sampled_entropy_gradient(mdp, theta, &observations)?;
            let vg = reinforce_value_gradient(mdp, theta, &batch, config.value_baseline);
            Ok(Estimates {
                entropy: h.value,
                value: vg.value,
                entropy_grad,
                value_grad: vg.grad,
            })
        }
    }
}

/// Runs the primal-dual loop from `initial` on `mdp` (budget `ε` taken from
/// the model).
///
/// Each iteration performs `batches_per_iter` primal updates, each on a
/// freshly sampled mini-batch of roughly `batch_size / batches_per_iter`
/// trajectories, then one dual update from the iteration's mean value
/// estimate.
pub fn synthesize<T: Scalar>(
    mdp: &MaskMdp<T>,
    initial: PolicyParams<T>,
    config: &SynthesisConfig<T>,
) -> std::result::Result<SynthesisRun<T>, Box<SynthesisFailure<T>>> {
    let fail = |error: Error, trace: SynthesisTrace<T>| Box::new(SynthesisFailure { error, trace });
    if let Err(e) = config.validate() {
        return Err(fail(e, SynthesisTrace::default()));
    }
    let epsilon = mdp.budget();
    let mut state = LagrangianState::new(initial, config, epsilon);
    let mut trace = SynthesisTrace::default();
    let start = Instant::now();
    let n_batches = match config.estimator {
        Estimator::Exact => 1,
        Estimator::Sampled => config.batches_per_iter,
    };
    let mut lagrangians: Vec<T> = Vec::new();
    let mut stopped_early = false;

    for k in 0..config.iterations {
        let mut entropy = T::zero();
        let mut value = T::zero();
        let mut grad_norm = T::zero();
        for b in 0..n_batches {
            let size = config.batch_size / n_batches + usize::from(b < config.batch_size % n_batches);
            let est = match estimate(mdp, &state.theta, config, size, batch_seed(config.seed, k, b)) {
                Ok(e) => e,
                Err(e) => return Err(fail(e, trace)),
            };
            let norm = match state.primal_step(&est.entropy_grad, &est.value_grad) {
                Ok(n) => n,
                Err(e) => return Err(fail(e, trace)),
            };
            let w = lit::<T>(size as f64 / config.batch_size.max(1) as f64);
            let w = if config.estimator == Estimator::Exact { T::one() } else { w };
            entropy += w * est.entropy;
            value += w * est.value;
            grad_norm += norm / lit(n_batches as f64);
        }
        state.dual_step(value);
        state.iteration += 1;
        let row = TraceRow {
            iter: k,
            entropy,
            value,
            lambda: state.lambda,
            grad_norm,
            wall_s: if config.record_timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        if [entropy, value, state.lambda, grad_norm].iter().any(|x| x.is_nan()) {
            return Err(fail(
                Error::DivergedParameters {
                    iteration: k,
                    max_abs: f64::NAN,
                },
                trace,
            ));
        }
        log::debug!(
            "iter {k}: H={} V={} lambda={} |g|={}",
            to_f64(entropy),
            to_f64(value),
            to_f64(state.lambda),
            to_f64(grad_norm)
        );
        trace.push(row);

        if let Some(window) = config.early_stop_window {
            lagrangians.push(lagrangian(entropy, value, state.lambda, epsilon));
            if lagrangians.len() > window {
                let recent = &lagrangians[lagrangians.len() - window - 1..];
                let change = recent.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<T>() / lit(window as f64);
                if change < config.early_stop_tol {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    Ok(SynthesisRun {
        lambda: state.lambda,
        policy: state.theta,
        trace,
        stopped_early,
    })
}
