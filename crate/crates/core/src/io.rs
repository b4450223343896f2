//! Text formats: scenario files, policy files and run summaries (all TOML).
//!
//! # Scenario files
//!
//! A sensor scenario lists its parts by label:
//!
//! ```toml
//! [states]
//! names = ["s0", "s1"]
//!
//! transitions = [["s0", "s1", "1/3"], ["s0", "s0", "2/3"], ["s1", "s1", 1.0]]
//!
//! [[sensors]]
//! name = "R"
//! coverage = ["s1"]
//! detection_prob = 0.85
//! false_positive_prob = 0.0   # optional
//!
//! [[mask_actions]]
//! name = "R"
//! masks = ["R"]
//!
//! [[mask_actions]]
//! name = "N"
//! masks = []
//!
//! [mask_costs]
//! base = { R = 10, N = 0 }
//! repeat_factor = 0.5
//! no_mask_cost = 0
//!
//! [initial]
//! dist = { s0 = 1.0 }
//! config = "N"
//!
//! [secret]
//! states = ["s1"]
//!
//! [problem]
//! horizon = 2
//! discount = 1.0
//! budget = 60
//! mask_visible = true
//! ```
//!
//! Probabilities may be numbers or `"a/b"` fraction strings. Transitions are
//! listed as `[from, to, prob]`; unlisted pairs are zero.
//!
//! A gridworld replaces everything but `[problem]` with a `[gridworld]`
//! table: `rows`, `cols`, `walls`, `hazards`, `secrets`, `absorbing`,
//! `slip_prob`, `initial_cells`, `repeat_factor`, `[[gridworld.sensors]]`
//! entries (`name`, `coverage` as cell numbers, `detection_prob`,
//! optional `false_positive_prob`, `cost`) and a `[gridworld.robot_policy]`
//! table mapping cell numbers to either a string of moves (`"N E"`, a uniform
//! mixture) or a table of move probabilities.
//!
//! Either kind may carry an optional `[synthesis]` table with optimizer
//! settings (`iterations`, `batch_size`, `batches_per_iter`, `eta`, `kappa`,
//! `lambda0`, `seed`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MaskMdp;
use crate::optimizer::SynthesisConfig;
use crate::policy::{ConditioningMode, PolicyParams};
use crate::scalar::{lit, to_f64, Scalar};
use crate::scenarios::{GridworldConfig, MaskActionDef, MaskCostRule, Move, Sensor, SensorScenario};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawProb {
    Num(f64),
    Text(String),
}

impl RawProb {
    fn value(&self, section: &str) -> Result<f64> {
        match self {
            RawProb::Num(x) => Ok(*x),
            RawProb::Text(s) => parse_fraction(s).ok_or_else(|| scenario_err(section, format!("cannot parse probability `{s}`"))),
        }
    }
}

/// Parses `"a/b"` or a plain decimal.
pub fn parse_fraction(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().ok()?;
            let b: f64 = b.trim().parse().ok()?;
            (b != 0.0).then(|| a / b)
        }
        None => s.trim().parse().ok(),
    }
}

fn scenario_err(section: &str, message: impl Into<String>) -> Error {
    Error::Scenario {
        section: section.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    states: Option<RawStates>,
    transitions: Option<Vec<(String, String, RawProb)>>,
    sensors: Option<Vec<RawSensor>>,
    mask_actions: Option<Vec<RawAction>>,
    mask_costs: Option<RawCosts>,
    initial: Option<RawInitial>,
    secret: Option<RawSecret>,
    gridworld: Option<RawGrid>,
    problem: RawProblem,
    #[serde(default)]
    synthesis: SynthesisSettings,
}

/// Optional `[synthesis]` section: optimizer settings that suit the scenario.
/// Command-line overrides take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSettings {
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub batches_per_iter: Option<usize>,
    pub eta: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda0: Option<f64>,
    pub seed: Option<u64>,
}

impl SynthesisSettings {
    pub fn apply<T: Scalar>(&self, config: &mut SynthesisConfig<T>) {
        if let Some(x) = self.iterations {
            config.iterations = x;
        }
        if let Some(x) = self.batch_size {
            config.batch_size = x;
        }
        if let Some(x) = self.batches_per_iter {
            config.batches_per_iter = x;
        }
        if let Some(x) = self.eta {
            config.eta = lit(x);
        }
        if let Some(x) = self.kappa {
            config.kappa = lit(x);
        }
        if let Some(x) = self.lambda0 {
            config.lambda0 = lit(x);
        }
        if let Some(x) = self.seed {
            config.seed = x;
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStates {
    names: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    name: String,
    coverage: Vec<String>,
    detection_prob: RawProb,
    false_positive_prob: Option<RawProb>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    name: String,
    masks: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCosts {
    base: BTreeMap<String, f64>,
    repeat_factor: f64,
    #[serde(default)]
    no_mask_cost: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    dist: BTreeMap<String, RawProb>,
    config: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSecret {
    states: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    horizon: usize,
    #[serde(default = "one")]
    discount: f64,
    budget: f64,
    #[serde(default = "yes")]
    mask_visible: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    rows: usize,
    cols: usize,
    #[serde(default)]
    walls: Vec<usize>,
    #[serde(default)]
    hazards: Vec<usize>,
    secrets: Vec<usize>,
    #[serde(default)]
    absorbing: Vec<usize>,
    slip_prob: RawProb,
    initial_cells: Vec<usize>,
    repeat_factor: f64,
    sensors: Vec<RawGridSensor>,
    robot_policy: BTreeMap<String, RawMoves>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGridSensor {
    name: String,
    coverage: Vec<usize>,
    detection_prob: RawProb,
    false_positive_prob: Option<RawProb>,
    cost: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMoves {
    Letters(String),
    Dist(BTreeMap<String, RawProb>),
}

fn lookup(names: &[String], name: &str, section: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| scenario_err(section, format!("unknown {what} `{name}`")))
}

fn sensor_scenario<T: Scalar>(raw: RawFile) -> Result<SensorScenario<T>> {
    let need = |present: bool, section: &str| {
        if present {
            Ok(())
        } else {
            Err(scenario_err(section, "missing section"))
        }
    };
    need(raw.states.is_some(), "states")?;
    need(raw.transitions.is_some(), "transitions")?;
    need(raw.mask_actions.is_some(), "mask_actions")?;
    need(raw.mask_costs.is_some(), "mask_costs")?;
    need(raw.initial.is_some(), "initial")?;
    need(raw.secret.is_some(), "secret")?;
    let states = raw.states.unwrap().names;
    let ns = states.len();
    let mut transition = vec![vec![T::zero(); ns]; ns];
    for (from, to, p) in raw.transitions.unwrap() {
        let i = lookup(&states, &from, "transitions", "state")?;
        let j = lookup(&states, &to, "transitions", "state")?;
        transition[i][j] += lit(p.value("transitions")?);
    }
    let mut sensors = Vec::new();
    for s in raw.sensors.unwrap_or_default() {
        let coverage = s
            .coverage
            .iter()
            .map(|c| lookup(&states, c, "sensors", "state"))
            .collect::<Result<Vec<_>>>()?;
        sensors.push(Sensor {
            name: s.name,
            coverage,
            detection_prob: lit(s.detection_prob.value("sensors")?),
            false_positive_prob: lit(match &s.false_positive_prob {
                Some(p) => p.value("sensors")?,
                None => 0.0,
            }),
        });
    }
    let sensor_names: Vec<String> = sensors.iter().map(|s| s.name.clone()).collect();
    let mut mask_actions = Vec::new();
    for a in raw.mask_actions.unwrap() {
        let masks = a
            .masks
            .iter()
            .map(|m| lookup(&sensor_names, m, "mask_actions", "sensor"))
            .collect::<Result<Vec<_>>>()?;
        mask_actions.push(MaskActionDef { name: a.name, masks });
    }
    let action_names: Vec<String> = mask_actions.iter().map(|a| a.name.clone()).collect();
    let costs = raw.mask_costs.unwrap();
    for k in costs.base.keys() {
        lookup(&action_names, k, "mask_costs", "mask action")?;
    }
    let base = action_names
        .iter()
        .map(|a| {
            costs
                .base
                .get(a)
                .map(|&c| lit(c))
                .ok_or_else(|| scenario_err("mask_costs", format!("no base cost for action `{a}`")))
        })
        .collect::<Result<Vec<T>>>()?;
    let init = raw.initial.unwrap();
    let mut initial_dist = vec![T::zero(); ns];
    for (s, p) in &init.dist {
        initial_dist[lookup(&states, s, "initial", "state")?] += lit(p.value("initial")?);
    }
    let initial_config = lookup(&action_names, &init.config, "initial", "mask action")?;
    let secret = raw
        .secret
        .unwrap()
        .states
        .iter()
        .map(|s| lookup(&states, s, "secret", "state"))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensorScenario {
        states,
        transition,
        sensors,
        mask_actions,
        costs: MaskCostRule {
            base,
            repeat_factor: lit(costs.repeat_factor),
            no_mask_cost: lit(costs.no_mask_cost),
        },
        initial_dist,
        initial_config,
        secret,
        horizon: raw.problem.horizon,
        discount: lit(raw.problem.discount),
        budget: lit(raw.problem.budget),
        mask_visible: raw.problem.mask_visible,
    })
}

fn gridworld_config<T: Scalar>(grid: RawGrid, problem: &RawProblem) -> Result<GridworldConfig<T>> {
    const SECTION: &str = "gridworld";
    let n = grid.rows * grid.cols;
    let mut robot_policy = vec![None; n];
    for (cell, moves) in &grid.robot_policy {
        let c: usize = cell
            .trim()
            .parse()
            .map_err(|_| scenario_err("gridworld.robot_policy", format!("`{cell}` is not a cell number")))?;
        if c >= n {
            return Err(scenario_err("gridworld.robot_policy", format!("cell {c} outside the grid")));
        }
        let bad_move = |m: &str| scenario_err("gridworld.robot_policy", format!("unknown move `{m}` at cell {c}"));
        let mut row = [T::zero(); 4];
        match moves {
            RawMoves::Letters(s) => {
                let list: Vec<&str> = s.split(|ch: char| ch.is_whitespace() || ch == ',').filter(|m| !m.is_empty()).collect();
                if list.is_empty() {
                    return Err(scenario_err("gridworld.robot_policy", format!("no moves for cell {c}")));
                }
                let w = T::one() / lit(list.len() as f64);
                for m in list {
                    row[Move::parse(m).ok_or_else(|| bad_move(m))?.index()] += w;
                }
            }
            RawMoves::Dist(d) => {
                for (m, p) in d {
                    row[Move::parse(m).ok_or_else(|| bad_move(m))?.index()] += lit(p.value("gridworld.robot_policy")?);
                }
            }
        }
        robot_policy[c] = Some(row);
    }
    let mut sensors = Vec::new();
    let mut mask_costs = Vec::new();
    for s in grid.sensors {
        sensors.push(Sensor {
            name: s.name,
            coverage: s.coverage,
            detection_prob: lit(s.detection_prob.value(SECTION)?),
            false_positive_prob: lit(match &s.false_positive_prob {
                Some(p) => p.value(SECTION)?,
                None => 0.0,
            }),
        });
        mask_costs.push(lit(s.cost));
    }
    Ok(GridworldConfig {
        rows: grid.rows,
        cols: grid.cols,
        walls: grid.walls,
        hazards: grid.hazards,
        secrets: grid.secrets,
        absorbing: grid.absorbing,
        slip_prob: lit(grid.slip_prob.value(SECTION)?),
        sensors,
        robot_policy,
        initial_cells: grid.initial_cells,
        mask_costs,
        repeat_factor: lit(grid.repeat_factor),
        horizon: problem.horizon,
        discount: lit(problem.discount),
        budget: lit(problem.budget),
        mask_visible: problem.mask_visible,
    })
}

/// The system part of a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioModel<T> {
    Sensors(SensorScenario<T>),
    Gridworld(GridworldConfig<T>),
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile<T> {
    pub model: ScenarioModel<T>,
    pub synthesis: SynthesisSettings,
}

impl<T: Scalar> ScenarioFile<T> {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| scenario_err("file", e.to_string().trim_end().to_string()))?;
        let synthesis = raw.synthesis.clone();
        let model = match raw.gridworld {
            Some(_) => {
                let sensor_sections = [
                    ("states", raw.states.is_some()),
                    ("transitions", raw.transitions.is_some()),
                    ("sensors", raw.sensors.is_some()),
                    ("mask_actions", raw.mask_actions.is_some()),
                    ("mask_costs", raw.mask_costs.is_some()),
                    ("initial", raw.initial.is_some()),
                    ("secret", raw.secret.is_some()),
                ];
                if let Some((name, _)) = sensor_sections.iter().find(|(_, present)| *present) {
                    return Err(scenario_err(name, "not allowed together with [gridworld]"));
                }
                let RawFile { gridworld, problem, .. } = raw;
                ScenarioModel::Gridworld(gridworld_config(gridworld.unwrap(), &problem)?)
            }
            None => ScenarioModel::Sensors(sensor_scenario(raw)?),
        };
        Ok(ScenarioFile { model, synthesis })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Sets every sensor's detection probability.
    pub fn set_detection_prob(&mut self, beta: T) {
        let sensors = match &mut self.model {
            ScenarioModel::Sensors(s) => &mut s.sensors,
            ScenarioModel::Gridworld(g) => &mut g.sensors,
        };
        sensors.iter_mut().for_each(|s| s.detection_prob = beta);
    }

    pub fn set_problem(&mut self, horizon: Option<usize>, discount: Option<T>, budget: Option<T>) {
        let (h, d, b) = match &mut self.model {
            ScenarioModel::Sensors(s) => (&mut s.horizon, &mut s.discount, &mut s.budget),
            ScenarioModel::Gridworld(g) => (&mut g.horizon, &mut g.discount, &mut g.budget),
        };
        if let Some(x) = horizon {
            *h = x;
        }
        if let Some(x) = discount {
            *d = x;
        }
        if let Some(x) = budget {
            *b = x;
        }
    }

    pub fn to_scenario(&self) -> Result<SensorScenario<T>> {
        match &self.model {
            ScenarioModel::Sensors(s) => Ok(s.clone()),
            ScenarioModel::Gridworld(g) => g.to_scenario(),
        }
    }
}

/// Parses a scenario file and compiles it to a [`SensorScenario`].
pub fn load_scenario<T: Scalar>(path: &Path) -> Result<SensorScenario<T>> {
    ScenarioFile::load(path)?.to_scenario()
}

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

fn fmt_list(xs: impl Iterator<Item = f64>) -> String {
    let items: Vec<String> = xs.map(fmt_float).collect();
    format!("[{}]", items.join(", "))
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Serializes a policy with its labels, action probabilities and raw `θ`
/// rows. `θ` round-trips bit-exactly through [`read_policy`].
pub fn write_policy<T: Scalar>(mdp: &MaskMdp<T>, policy: &PolicyParams<T>) -> String {
    let labels = mdp.labels();
    let mut out = String::new();
    out.push_str(&format!("mode = {}\n", quote(policy.mode().as_str())));
    let actions: Vec<String> = labels.actions.iter().map(|a| quote(a)).collect();
    out.push_str(&format!("actions = [{}]\n", actions.join(", ")));
    for row in 0..policy.n_rows() {
        let z = policy.states_of_row(row).start;
        let (s, prev) = mdp.from_index(z);
        out.push_str("\n[[row]]\n");
        out.push_str(&format!("state = {}\n", quote(&labels.states[s])));
        if policy.mode() == ConditioningMode::Augmented {
            out.push_str(&format!("prev_config = {}\n", quote(&labels.actions[prev])));
        }
        out.push_str(&format!(
            "probs = {}\n",
            fmt_list(policy.action_distribution(z).into_iter().map(to_f64))
        ));
        out.push_str(&format!("theta = {}\n", fmt_list(policy.row(row).iter().map(|&x| to_f64(x)))));
    }
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    mode: String,
    actions: Vec<String>,
    #[serde(default)]
    row: Vec<RawPolicyRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyRow {
    state: String,
    prev_config: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    probs: Vec<f64>,
    theta: Vec<f64>,
}

/// Reads a policy written by [`write_policy`] for the same model. Rows are
/// matched by label; `probs` is informational and ignored.
pub fn read_policy<T: Scalar>(mdp: &MaskMdp<T>, text: &str) -> Result<PolicyParams<T>> {
    let raw: RawPolicy = toml::from_str(text).map_err(|e| Error::PolicyFormat(e.to_string().trim_end().to_string()))?;
    let mode = ConditioningMode::parse(&raw.mode)
        .ok_or_else(|| Error::PolicyFormat(format!("unknown conditioning mode `{}`", raw.mode)))?;
    let labels = mdp.labels();
    if raw.actions != labels.actions {
        return Err(Error::PolicyShape(format!(
            "policy actions {:?} differ from model actions {:?}",
            raw.actions, labels.actions
        )));
    }
    let mut policy = PolicyParams::zeros(mdp, mode);
    if raw.row.len() != policy.n_rows() {
        return Err(Error::PolicyShape(format!(
            "policy has {} rows, model needs {}",
            raw.row.len(),
            policy.n_rows()
        )));
    }
    let mut seen = vec![false; policy.n_rows()];
    for r in &raw.row {
        let s = labels
            .states
            .iter()
            .position(|x| *x == r.state)
            .ok_or_else(|| Error::PolicyShape(format!("unknown state `{}`", r.state)))?;
        let prev = match (mode, &r.prev_config) {
            (ConditioningMode::Augmented, Some(p)) => labels
                .actions
                .iter()
                .position(|x| x == p)
                .ok_or_else(|| Error::PolicyShape(format!("unknown configuration `{p}`")))?,
            (ConditioningMode::Augmented, None) => {
                return Err(Error::PolicyFormat(format!("row for `{}` lacks prev_config", r.state)))
            }
            (ConditioningMode::StateOnly, _) => 0,
        };
        let row = policy.row_of(mdp.to_index(s, prev));
        if std::mem::replace(&mut seen[row], true) {
            return Err(Error::PolicyFormat(format!("duplicate row for `{}`", r.state)));
        }
        if r.theta.len() != policy.n_actions() {
            return Err(Error::PolicyShape(format!(
                "row for `{}` has {} parameters, model has {} actions",
                r.state,
                r.theta.len(),
                policy.n_actions()
            )));
        }
        for (dst, &x) in policy.row_mut(row).iter_mut().zip(&r.theta) {
            *dst = lit(x);
        }
    }
    Ok(policy)
}

/// Final numbers of a run, written as `summary.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Bits.
    pub entropy: f64,
    /// `"exact"` or `"sampled"`.
    pub entropy_mode: String,
    pub entropy_std_error: f64,
    pub expected_cost: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub seed: u64,
    pub wall_s: f64,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| scenario_err("summary", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{build_illustrative, illustrative_scenario};

    const SMALL: &str = r#"
        transitions = [["a", "b", "1/3"], ["a", "a", "2/3"], ["b", "b", 1]]

        [states]
        names = ["a", "b"]

        [[sensors]]
        name = "X"
        coverage = ["b"]
        detection_prob = 0.9

        [[mask_actions]]
        name = "X"
        masks = ["X"]

        [[mask_actions]]
        name = "N"
        masks = []

        [mask_costs]
        base = { X = 4, N = 0 }
        repeat_factor = 0.5

        [initial]
        dist = { a = 1 }
        config = "N"

        [secret]
        states = ["b"]

        [problem]
        horizon = 3
        budget = 5
    "#;

    #[test]
    fn parses_small_file() {
        let sc = ScenarioFile::<f64>::parse(SMALL).unwrap().to_scenario().unwrap();
        assert_eq!(sc.states, ["a", "b"]);
        assert!((sc.transition[0][1] - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(sc.costs.base, [4.0, 0.0]);
        assert_eq!(sc.initial_config, 1);
        assert_eq!(sc.discount, 1.0);
        assert!(sc.mask_visible);
        let spec = sc.to_spec().unwrap();
        assert_eq!(spec.n_observations(), 4);
    }

    #[test]
    fn unknown_state_names_section() {
        let text = SMALL.replace(r#"coverage = ["b"]"#, r#"coverage = ["c"]"#);
        let err = ScenarioFile::<f64>::parse(&text).unwrap_err().to_string();
        assert!(err.contains("sensors") && err.contains("`c`"), "{err}");
    }

    #[test]
    fn syntax_error_names_line() {
        let text = SMALL.replace("horizon = 3", "horizon = ");
        let err = ScenarioFile::<f64>::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn missing_section_is_named() {
        let text = SMALL.replace("[secret]\n        states = [\"b\"]", "");
        let err = ScenarioFile::<f64>::parse(&text).unwrap_err().to_string();
        assert!(err.contains("secret"), "{err}");
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_fraction("1/3"), Some(1.0 / 3.0));
        assert_eq!(parse_fraction(" 0.25 "), Some(0.25));
        assert_eq!(parse_fraction("1/0"), None);
        assert_eq!(parse_fraction("x"), None);
    }

    #[test]
    fn policy_round_trip_is_bit_exact() {
        let mdp = build_illustrative::<f64>().build_mask_mdp().unwrap();
        for mode in [ConditioningMode::Augmented, ConditioningMode::StateOnly] {
            let mut p = PolicyParams::zeros(&mdp, mode);
            for (i, x) in p.theta_mut().iter_mut().enumerate() {
                *x = (i as f64 * 0.7311).sin() * 10f64.powi(i as i32 % 9 - 4);
            }
            let text = write_policy(&mdp, &p);
            let back = read_policy(&mdp, &text).unwrap();
            let bits = |q: &PolicyParams<f64>| q.theta().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&p));
            assert_eq!(back.mode(), mode);
        }
    }

    #[test]
    fn policy_shape_mismatch() {
        let mdp = build_illustrative::<f64>().build_mask_mdp().unwrap();
        let p = PolicyParams::zeros(&mdp, ConditioningMode::Augmented);
        let text = write_policy(&mdp, &p);
        let mut sc = illustrative_scenario::<f64>();
        sc.states.push("s7".into());
        for row in sc.transition.iter_mut() {
            row.push(0.0);
        }
        let mut extra = vec![0.0; 8];
        extra[7] = 1.0;
        sc.transition.push(extra);
        sc.initial_dist.push(0.0);
        let other = sc.build_mask_mdp().unwrap();
        assert!(matches!(read_policy(&other, &text), Err(Error::PolicyShape(_))));
    }

    #[test]
    fn summary_round_trip() {
        let s = RunSummary {
            entropy: 0.7132,
            entropy_mode: "exact".into(),
            entropy_std_error: 0.0,
            expected_cost: 42.63,
            epsilon: 60.0,
            iterations: 1000,
            lambda: 0.0,
            seed: 7,
            wall_s: 1.5,
        };
        assert_eq!(RunSummary::parse(&s.to_text()).unwrap(), s);
    }
}
