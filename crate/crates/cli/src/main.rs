//! `maskopt`: synthesize and evaluate sensor-masking policies from scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use maskopt::diagnostics::{enumerate_check, gradient_check, random_policy};
use maskopt::entropy::enumeration_size;
use maskopt::io::{read_policy, write_policy, RunSummary, ScenarioFile};
use maskopt::optimizer::Estimator;
use maskopt::scenarios::{final_state_masking_policy, no_masking_policy};
use maskopt::{
    exact_conditional_entropy, exact_value, sample_trajectories, sampled_conditional_entropy, synthesize,
    ConditioningMode, EntropyEstimate, EstimateMode, Error, MaskMdpF64, PolicyParamsF64, SensorScenarioF64,
    SynthesisConfigF64, DEFAULT_ENUMERATION_CAP,
};

#[derive(Parser, Debug)]
#[command(name = "maskopt", version, about = "Budget-constrained sensor masking for final-state opacity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the primal-dual synthesis and write trace.csv, policy.txt and summary.txt.
    Synthesize(Common),
    /// Report entropy and expected cost of a stored or baseline policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        policy: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Compare analytic gradients with finite differences at a random policy.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        probes: usize,
        /// Range of the random parameters.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Check that sequence probabilities sum to one and that sampled entropy agrees with enumeration.
    EnumerateCheck {
        #[command(flatten)]
        common: Common,
        /// Policy to check; a random one if omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (the `.toml` extension may be omitted).
    scenario: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batches_per_iter: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Masking budget.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Detection probability applied to every sensor.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "MASKOPT_OUTPUT_DIR", default_value = "out")]
    output_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Conditioning::Augmented)]
    conditioning: Conditioning,
    /// Write zeros for wall time in the trace so runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Sampled)]
    estimator: EstimatorArg,
    /// Trajectories for sampled entropy estimates when enumeration is too large.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Largest |O|^L evaluated exactly.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    enumeration_cap: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Conditioning {
    Augmented,
    StateOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Sampled,
    Exact,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    NoMask,
    FinalState,
    Uniform,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Parse(anyhow::Error),
    Diverged(anyhow::Error),
    Shape(anyhow::Error),
    Check(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::Shape(_) => 4,
            Failure::Check(_) => 5,
        }
    }

    fn classify(e: Error) -> Failure {
        match e {
            Error::DivergedParameters { .. } => Failure::Diverged(e.into()),
            Error::PolicyShape(_) => Failure::Shape(e.into()),
            Error::Scenario { .. } | Error::PolicyFormat(_) => Failure::Parse(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check(msg) => eprintln!("check failed: {msg}"),
                Failure::Parse(e) | Failure::Diverged(e) | Failure::Shape(e) | Failure::Other(e) => {
                    eprintln!("error: {e:#}")
                }
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let common = match &cli.command {
        Command::Synthesize(c) => c,
        Command::Evaluate { common, .. } | Command::Gradcheck { common, .. } | Command::EnumerateCheck { common, .. } => {
            common
        }
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let loaded = Loaded::new(common)?;
    match &cli.command {
        Command::Synthesize(c) => run_synthesize(c, &loaded),
        Command::Evaluate { common, policy, baseline } => run_evaluate(common, &loaded, policy.as_deref(), *baseline),
        Command::Gradcheck { common, probes, scale } => run_gradcheck(common, &loaded, *probes, *scale),
        Command::EnumerateCheck { common, policy } => run_enumerate_check(common, &loaded, policy.as_deref()),
    }
}

/// `path`, or `path.toml` when only that exists.
fn resolve_scenario(path: &Path) -> PathBuf {
    if !path.exists() {
        let mut with_ext = path.as_os_str().to_owned();
        with_ext.push(".toml");
        let with_ext = PathBuf::from(with_ext);
        if with_ext.exists() {
            return with_ext;
        }
    }
    path.to_path_buf()
}

struct Loaded {
    scenario: SensorScenarioF64,
    mdp: MaskMdpF64,
    config: SynthesisConfigF64,
}

impl Loaded {
    /// Parses the scenario, applies overrides and builds the model. Any
    /// failure here is an input error (exit 2).
    fn new(c: &Common) -> Result<Self, Failure> {
        let path = resolve_scenario(&c.scenario);
        let parse = |e: Error| Failure::Parse(anyhow::Error::new(e).context(format!("loading {}", path.display())));
        let mut file = ScenarioFile::<f64>::load(&path).map_err(parse)?;
        if let Some(beta) = c.beta {
            file.set_detection_prob(beta);
        }
        file.set_problem(c.horizon, c.gamma, c.epsilon);
        let scenario = file.to_scenario().map_err(parse)?;
        let mdp = scenario.build_mask_mdp().map_err(parse)?;

        let mut config = SynthesisConfigF64::default();
        file.synthesis.apply(&mut config);
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut config.iterations, c.iterations);
        set(&mut config.batch_size, c.batch_size);
        set(&mut config.batches_per_iter, c.batches_per_iter);
        if let Some(x) = c.eta {
            config.eta = x;
        }
        if let Some(x) = c.kappa {
            config.kappa = x;
        }
        if let Some(x) = c.seed {
            config.seed = x;
        }
        config.record_timing = !c.no_timing;
        config.estimator = match c.estimator {
            EstimatorArg::Sampled => Estimator::Sampled,
            EstimatorArg::Exact => Estimator::Exact,
        };
        config
            .validate()
            .map_err(|e| Failure::Parse(anyhow::Error::new(e).context("invalid synthesis settings")))?;
        Ok(Loaded { scenario, mdp, config })
    }
}

fn mode(c: &Common) -> ConditioningMode {
    match c.conditioning {
        Conditioning::Augmented => ConditioningMode::Augmented,
        Conditioning::StateOnly => ConditioningMode::StateOnly,
    }
}

/// Exact entropy when `|O|^L` is under the cap, otherwise a sampled estimate.
fn entropy_of(
    c: &Common,
    mdp: &MaskMdpF64,
    policy: &PolicyParamsF64,
    seed: u64,
) -> Result<EntropyEstimate<f64>, Failure> {
    if enumeration_size(mdp) <= c.enumeration_cap as f64 {
        return exact_conditional_entropy(mdp, policy, c.enumeration_cap).map_err(Failure::classify);
    }
    let obs: Vec<Vec<usize>> = sample_trajectories(mdp, policy, c.samples.max(2), seed)
        .into_iter()
        .map(|t| t.observations)
        .collect();
    sampled_conditional_entropy(mdp, policy, &obs).map_err(Failure::classify)
}

fn mode_name(e: &EntropyEstimate<f64>) -> &'static str {
    match e.mode {
        EstimateMode::Exact => "exact",
        EstimateMode::Sampled => "sampled",
    }
}

/// Seed for final evaluation samples, kept apart from the training streams.
fn evaluation_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_E7A1_0000_0001
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_synthesize(c: &Common, l: &Loaded) -> Outcome {
    let dir = &c.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let initial = PolicyParamsF64::zeros(&l.mdp, mode(c));
    let start = Instant::now();
    log::info!(
        "synthesizing: {} augmented states, {} iterations, epsilon {}",
        l.mdp.n_aug(),
        l.config.iterations,
        l.mdp.budget()
    );
    let run = match synthesize(&l.mdp, initial, &l.config) {
        Ok(run) => run,
        Err(failure) => {
            write(dir, "trace.csv", &failure.trace.to_csv())?;
            return Err(Failure::classify(failure.error));
        }
    };
    let wall_s = if l.config.record_timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    write(dir, "trace.csv", &run.trace.to_csv())?;
    write(dir, "policy.txt", &write_policy(&l.mdp, &run.policy))?;

    let h = entropy_of(c, &l.mdp, &run.policy, evaluation_seed(l.config.seed))?;
    let summary = RunSummary {
        entropy: h.value,
        entropy_mode: mode_name(&h).into(),
        entropy_std_error: h.std_error,
        expected_cost: exact_value(&l.mdp, &run.policy),
        epsilon: l.mdp.budget(),
        iterations: run.trace.len(),
        lambda: run.lambda,
        seed: l.config.seed,
        wall_s,
    };
    write(dir, "summary.txt", &summary.to_text())?;
    print!("{}", summary.to_text());
    Ok(())
}

fn run_evaluate(c: &Common, l: &Loaded, policy: Option<&Path>, baseline: Option<Baseline>) -> Outcome {
    let policy = match (policy, baseline) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            read_policy(&l.mdp, &text).map_err(Failure::classify)?
        }
        (None, Some(Baseline::NoMask)) => no_masking_policy(&l.mdp).map_err(Failure::classify)?,
        (None, Some(Baseline::FinalState)) => {
            final_state_masking_policy(&l.scenario, &l.mdp).map_err(Failure::classify)?
        }
        (None, Some(Baseline::Uniform)) => PolicyParamsF64::zeros(&l.mdp, mode(c)),
        (None, None) => unreachable!("clap requires --policy or --baseline"),
    };
    let seed = l.config.seed;
    let h = entropy_of(c, &l.mdp, &policy, evaluation_seed(seed))?;
    println!("entropy = {}", h.value);
    println!("entropy_mode = \"{}\"", mode_name(&h));
    println!("entropy_std_error = {}", h.std_error);
    println!("expected_cost = {}", exact_value(&l.mdp, &policy));
    println!("epsilon = {}", l.mdp.budget());
    Ok(())
}

fn run_gradcheck(c: &Common, l: &Loaded, probes: usize, scale: f64) -> Outcome {
    let policy = random_policy(&l.mdp, mode(c), scale, l.config.seed);
    let report = gradient_check(&l.mdp, &policy, probes, l.config.seed, c.enumeration_cap).map_err(Failure::classify)?;
    for f in &report.families {
        let verdict = if f.max_rel_error <= report.tolerance { "ok" } else { "FAIL" };
        println!("{:<22} max_rel_error = {:.3e}  {verdict}", f.name, f.max_rel_error);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient error above {:e}", report.tolerance)))
    }
}

fn run_enumerate_check(c: &Common, l: &Loaded, policy: Option<&Path>) -> Outcome {
    let policy = match policy {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            read_policy(&l.mdp, &text).map_err(Failure::classify)?
        }
        None => random_policy(&l.mdp, mode(c), 1.0, l.config.seed),
    };
    let check = enumerate_check(&l.mdp, &policy, c.samples.max(2), l.config.seed, c.enumeration_cap)
        .map_err(Failure::classify)?;
    println!("total_probability = {}", check.total_probability);
    println!("exact_entropy = {}", check.exact.value);
    println!(
        "sampled_entropy = {} (std error {}, {} samples)",
        check.sampled.value, check.sampled.std_error, check.sampled.sample_count
    );
    if check.passed() {
        Ok(())
    } else {
        Err(Failure::Check("enumeration and sampling disagree".into()))
    }
}
