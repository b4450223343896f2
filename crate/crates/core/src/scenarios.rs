//! Sensor-network scenarios: the running 7-state example, a slippery
//! gridworld, and the two reference masking policies.
//!
//! A [`SensorScenario`] describes a system through binary sensors rather
//! than a raw emission table. Each sensor reports its label when the system
//! is inside its coverage (with the detection probability) and stays silent
//! otherwise; a masked sensor never reports. Mask actions name the sensors
//! they silence. When masks are visible, an observation is the pair
//! `(reading, configuration in force)`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{HmmSpec, MaskMdp};
use crate::policy::{ConditioningMode, PolicyParams};
use crate::scalar::{lit, renorm_tol, Scalar};

/// Logit gap that makes a softmax row deterministic to within 1e-12.
pub const SATURATION: f64 = 30.0;

/// Label of the silent reading.
pub const NULL_READING: &str = "0";

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor<T> {
    pub name: String,
    /// Covered state indices.
    pub coverage: Vec<usize>,
    pub detection_prob: T,
    pub false_positive_prob: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskActionDef {
    pub name: String,
    /// Indices of the sensors this configuration silences.
    pub masks: Vec<usize>,
}

impl MaskActionDef {
    pub fn masks_nothing(&self) -> bool {
        self.masks.is_empty()
    }
}

/// `C(s, σ, σ') = φ(σ')` on a change, `repeat_factor · φ(σ')` when the same
/// configuration is kept, and `no_mask_cost` for configurations that mask
/// nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCostRule<T> {
    /// `φ` per mask action.
    pub base: Vec<T>,
    pub repeat_factor: T,
    pub no_mask_cost: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorScenario<T> {
    pub states: Vec<String>,
    pub transition: Vec<Vec<T>>,
    pub sensors: Vec<Sensor<T>>,
    pub mask_actions: Vec<MaskActionDef>,
    pub costs: MaskCostRule<T>,
    pub initial_dist: Vec<T>,
    pub initial_config: usize,
    pub secret: Vec<usize>,
    pub horizon: usize,
    pub discount: T,
    pub budget: T,
    pub mask_visible: bool,
}

impl<T: Scalar> SensorScenario<T> {
    /// Reading alphabet: the silent reading followed by each sensor label.
    pub fn readings(&self) -> Vec<String> {
        std::iter::once(NULL_READING.to_string())
            .chain(self.sensors.iter().map(|s| s.name.clone()))
            .collect()
    }

    pub fn null_action(&self) -> Option<usize> {
        self.mask_actions.iter().position(MaskActionDef::masks_nothing)
    }

    /// Sensors covering state `s`.
    pub fn covering(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.sensors
            .iter()
            .enumerate()
            .filter(move |(_, sn)| sn.coverage.contains(&s))
            .map(|(k, _)| k)
    }

    fn reading_distribution(&self, s: usize, config: usize) -> Result<Vec<T>> {
        let masked = &self.mask_actions[config].masks;
        let mut dist = vec![T::zero(); self.sensors.len() + 1];
        let mut fire = T::zero();
        for (k, sn) in self.sensors.iter().enumerate() {
            if masked.contains(&k) {
                continue;
            }
            let p = if sn.coverage.contains(&s) {
                sn.detection_prob
            } else {
                sn.false_positive_prob
            };
            dist[k + 1] = p;
            fire += p;
        }
        if fire > T::one() + renorm_tol::<T>() {
            return Err(Error::Scenario {
                section: "sensors".into(),
                message: format!(
                    "firing probabilities at state {} under {} sum to {fire} (> 1); readings are exclusive",
                    self.states[s], self.mask_actions[config].name
                ),
            });
        }
        dist[0] = (T::one() - fire).max(T::zero());
        Ok(dist)
    }

    /// Compiles the scenario into an [`HmmSpec`] and validates it.
    pub fn to_spec(&self) -> Result<HmmSpec<T>> {
        let ns = self.states.len();
        let na = self.mask_actions.len();
        let readings = self.readings();
        for (k, sn) in self.sensors.iter().enumerate() {
            let bad_prob = |p: T| !(p >= T::zero() && p <= T::one());
            if bad_prob(sn.detection_prob) || bad_prob(sn.false_positive_prob) {
                return Err(Error::Scenario {
                    section: "sensors".into(),
                    message: format!("sensor {} has a probability outside [0, 1]", sn.name),
                });
            }
            if let Some(&c) = sn.coverage.iter().find(|&&c| c >= ns) {
                return Err(Error::Scenario {
                    section: "sensors".into(),
                    message: format!("sensor {} covers unknown state index {c}", self.sensors[k].name),
                });
            }
        }
        for a in &self.mask_actions {
            if let Some(&k) = a.masks.iter().find(|&&k| k >= self.sensors.len()) {
                return Err(Error::Scenario {
                    section: "mask_actions".into(),
                    message: format!("action {} masks unknown sensor index {k}", a.name),
                });
            }
        }
        if self.costs.base.len() != na {
            return Err(Error::Scenario {
                section: "mask_costs".into(),
                message: format!("expected {na} base costs, found {}", self.costs.base.len()),
            });
        }

        let observations: Vec<String> = if self.mask_visible {
            readings
                .iter()
                .flat_map(|r| self.mask_actions.iter().map(move |a| format!("({r},{})", a.name)))
                .collect()
        } else {
            readings.clone()
        };
        let nr = readings.len();
        let mut emission = vec![vec![vec![T::zero(); observations.len()]; na]; ns];
        for (s, per_state) in emission.iter_mut().enumerate() {
            for (a, row) in per_state.iter_mut().enumerate() {
                let dist = self.reading_distribution(s, a)?;
                for (r, &p) in dist.iter().enumerate() {
                    let o = if self.mask_visible { r * na + a } else { r };
                    row[o] += p;
                }
            }
        }
        debug_assert_eq!(observations.len(), if self.mask_visible { nr * na } else { nr });

        let mut mask_cost = vec![vec![vec![T::zero(); na]; na]; ns];
        for per_state in mask_cost.iter_mut() {
            for (from, row) in per_state.iter_mut().enumerate() {
                for (to, c) in row.iter_mut().enumerate() {
                    *c = if self.mask_actions[to].masks_nothing() {
                        self.costs.no_mask_cost
                    } else if from == to {
                        self.costs.base[to] * self.costs.repeat_factor
                    } else {
                        self.costs.base[to]
                    };
                }
            }
        }

        HmmSpec {
            states: self.states.clone(),
            observations,
            mask_actions: self.mask_actions.iter().map(|a| a.name.clone()).collect(),
            transition: self.transition.clone(),
            emission,
            initial_dist: self.initial_dist.clone(),
            initial_config: self.initial_config,
            secret: self.secret.clone(),
            mask_cost,
            horizon: self.horizon,
            discount: self.discount,
            budget: self.budget,
            null_action: self.null_action(),
        }
        .validate()
    }

    pub fn build_mask_mdp(&self) -> Result<MaskMdp<T>> {
        self.to_spec()?.build_mask_mdp()
    }
}

fn single_sensor_actions(names: &[&str]) -> Vec<MaskActionDef> {
    names
        .iter()
        .enumerate()
        .map(|(k, n)| MaskActionDef {
            name: n.to_string(),
            masks: vec![k],
        })
        .chain(std::iter::once(MaskActionDef {
            name: "N".into(),
            masks: Vec::new(),
        }))
        .collect()
}

/// The 7-state running example: `s0` branches uniformly to `s1, s2, s3`,
/// which lead to the absorbing `s4, s5, s6`. Sensors R, G, P, B watch
/// `s1, s3, s4, s6` with false-negative rate 0.15. Secret `{s4, s6}`,
/// horizon 2, masks visible, budget 60, no discounting.
pub fn illustrative_scenario<T: Scalar>() -> SensorScenario<T> {
    let third = T::one() / lit(3.0);
    let z = T::zero();
    let o = T::one();
    let transition = vec![
        vec![z, third, third, third, z, z, z],
        vec![z, z, z, z, o, z, z],
        vec![z, z, z, z, z, o, z],
        vec![z, z, z, z, z, z, o],
        vec![z, z, z, z, o, z, z],
        vec![z, z, z, z, z, o, z],
        vec![z, z, z, z, z, z, o],
    ];
    let beta = lit::<T>(0.85);
    let sensor = |name: &str, cell: usize| Sensor {
        name: name.into(),
        coverage: vec![cell],
        detection_prob: beta,
        false_positive_prob: T::zero(),
    };
    SensorScenario {
        states: (0..7).map(|i| format!("s{i}")).collect(),
        transition,
        sensors: vec![sensor("R", 1), sensor("G", 3), sensor("P", 4), sensor("B", 6)],
        mask_actions: single_sensor_actions(&["R", "G", "P", "B"]),
        costs: MaskCostRule {
            base: vec![lit(10.0), lit(10.0), lit(10.0), lit(30.0), T::zero()],
            repeat_factor: lit(0.5),
            no_mask_cost: T::zero(),
        },
        initial_dist: vec![o, z, z, z, z, z, z],
        initial_config: 4,
        secret: vec![4, 6],
        horizon: 2,
        discount: T::one(),
        budget: lit(60.0),
        mask_visible: true,
    }
}

/// [`illustrative_scenario`] compiled to an [`HmmSpec`].
pub fn build_illustrative<T: Scalar>() -> HmmSpec<T> {
    illustrative_scenario()
        .to_spec()
        .expect("built-in illustrative scenario is valid")
}

/// Robot moves in the gridworld.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Move {
    North,
    South,
    East,
    West,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::North, Move::South, Move::East, Move::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Move> {
        match s {
            "N" | "North" | "north" => Some(Move::North),
            "S" | "South" | "south" => Some(Move::South),
            "E" | "East" | "east" => Some(Move::East),
            "W" | "West" | "west" => Some(Move::West),
            _ => None,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Move::North => "N",
            Move::South => "S",
            Move::East => "E",
            Move::West => "W",
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Move::North => (-1, 0),
            Move::South => (1, 0),
            Move::East => (0, 1),
            Move::West => (0, -1),
        }
    }

    fn lateral(self) -> [Move; 2] {
        match self {
            Move::North | Move::South => [Move::East, Move::West],
            Move::East | Move::West => [Move::North, Move::South],
        }
    }

    /// The move after swapping rows and columns.
    pub fn transposed(self) -> Move {
        match self {
            Move::North => Move::West,
            Move::West => Move::North,
            Move::South => Move::East,
            Move::East => Move::South,
        }
    }
}

/// A slippery gridworld. Cells are numbered row-major from the top-left
/// corner: cell `r * cols + c`. Every cell is a state; walls are never
/// entered.
#[derive(Debug, Clone, PartialEq)]
pub struct GridworldConfig<T> {
    pub rows: usize,
    pub cols: usize,
    pub walls: Vec<usize>,
    /// Absorbing cells the robot should avoid.
    pub hazards: Vec<usize>,
    pub secrets: Vec<usize>,
    /// Additional absorbing cells (e.g. goals the robot stops at).
    pub absorbing: Vec<usize>,
    /// Probability of reaching the intended cell; each lateral cell gets `(1 − p)/2`.
    pub slip_prob: T,
    pub sensors: Vec<Sensor<T>>,
    /// Per-cell distribution over `[N, S, E, W]`; `None` where undefined.
    pub robot_policy: Vec<Option<[T; 4]>>,
    /// Start cells, uniformly weighted.
    pub initial_cells: Vec<usize>,
    /// `φ` per sensor; the mask actions are "mask one sensor" plus `N`.
    pub mask_costs: Vec<T>,
    pub repeat_factor: T,
    pub horizon: usize,
    pub discount: T,
    pub budget: T,
    pub mask_visible: bool,
}

/// Robot goal policy for the 6×6 facility. The reference policy exists only as a
/// drawing, so this is an approximation: goal-directed moves (no cycles, no
/// deliberate steps into hazards) picked so the prior secret entropy and
/// the two baseline entropies land near their reference values.
const FACILITY_POLICY: &[(usize, &[Move])] = {
    use Move::*;
    &[
        (0, &[South]),
        (2, &[South, East]),
        (3, &[East]),
        (4, &[East]),
        (5, &[South]),
        (6, &[East]),
        (7, &[East]),
        (8, &[East]),
        (10, &[West]),
        (11, &[West]),
        (12, &[North]),
        (14, &[North]),
        (16, &[South]),
        (18, &[North]),
        (21, &[West]),
        (22, &[West]),
        (24, &[North, East]),
        (25, &[East]),
        (26, &[North, East]),
        (27, &[North, East]),
        (28, &[North]),
        (29, &[West]),
        (30, &[North, East]),
        (31, &[North]),
        (32, &[East]),
        (33, &[East]),
        (34, &[North]),
    ]
};

impl<T: Scalar> GridworldConfig<T> {
    /// The 6×6 research-facility instance with sensor detection probability
    /// `beta`: walls {17, 19}, hazards {1, 13, 15, 35}, secret goals
    /// {9, 20, 23}, start {12, 30}, sensors A–D, `p = 0.8`, horizon 10.
    pub fn facility(beta: T) -> Self {
        let n = 36;
        let mut robot_policy = vec![None; n];
        for &(cell, moves) in FACILITY_POLICY {
            let mut row = [T::zero(); 4];
            let w = T::one() / lit(moves.len() as f64);
            for m in moves {
                row[m.index()] += w;
            }
            robot_policy[cell] = Some(row);
        }
        let sensor = |name: &str, coverage: &[usize]| Sensor {
            name: name.into(),
            coverage: coverage.to_vec(),
            detection_prob: beta,
            false_positive_prob: T::zero(),
        };
        GridworldConfig {
            rows: 6,
            cols: 6,
            walls: vec![17, 19],
            hazards: vec![1, 13, 15, 35],
            secrets: vec![9, 20, 23],
            absorbing: vec![9, 20, 23],
            slip_prob: lit(0.8),
            sensors: vec![
                sensor("A", &[3, 4, 9, 10]),
                sensor("B", &[21, 22, 28]),
                sensor("C", &[23, 29, 35]),
                sensor("D", &[6, 7, 8, 12, 13, 14]),
            ],
            robot_policy,
            initial_cells: vec![12, 30],
            mask_costs: vec![lit(20.0), lit(25.0), lit(15.0), lit(10.0)],
            repeat_factor: lit(0.5),
            horizon: 10,
            discount: T::one(),
            budget: lit(70.0),
            mask_visible: true,
        }
    }

    fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    fn neighbor(&self, cell: usize, m: Move, walls: &BTreeSet<usize>) -> usize {
        let (r, c) = ((cell / self.cols) as isize, (cell % self.cols) as isize);
        let (dr, dc) = m.delta();
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            return cell;
        }
        let next = nr as usize * self.cols + nc as usize;
        if walls.contains(&next) {
            cell
        } else {
            next
        }
    }

    /// Distribution over next cells for an intended move.
    fn move_distribution(&self, cell: usize, m: Move, walls: &BTreeSet<usize>) -> Vec<(usize, T)> {
        let side = (T::one() - self.slip_prob) / lit(2.0);
        let mut out = vec![(self.neighbor(cell, m, walls), self.slip_prob)];
        for l in m.lateral() {
            out.push((self.neighbor(cell, l, walls), side));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_cells();
        let bad = |msg: String| Err(Error::InvalidGridworld(msg));
        if n == 0 {
            return bad("empty grid".into());
        }
        for (name, set) in [
            ("walls", &self.walls),
            ("hazards", &self.hazards),
            ("secrets", &self.secrets),
            ("absorbing", &self.absorbing),
            ("initial_cells", &self.initial_cells),
        ] {
            if let Some(&c) = set.iter().find(|&&c| c >= n) {
                return bad(format!("{name} cell {c} outside the {}x{} grid", self.rows, self.cols));
            }
        }
        let walls: BTreeSet<_> = self.walls.iter().copied().collect();
        let hazards: BTreeSet<_> = self.hazards.iter().copied().collect();
        let secrets: BTreeSet<_> = self.secrets.iter().copied().collect();
        if !walls.is_disjoint(&hazards) || !walls.is_disjoint(&secrets) || !hazards.is_disjoint(&secrets) {
            return bad("walls, hazards and secrets must be pairwise disjoint".into());
        }
        if self.initial_cells.is_empty() || self.initial_cells.iter().any(|c| walls.contains(c)) {
            return bad("initial cells must be non-empty and not walls".into());
        }
        if !(self.slip_prob > T::zero() && self.slip_prob <= T::one()) {
            return bad(format!("slip probability {} outside (0, 1]", self.slip_prob));
        }
        if self.robot_policy.len() != n {
            return bad(format!("robot policy has {} rows for {n} cells", self.robot_policy.len()));
        }
        for (cell, row) in self.robot_policy.iter().enumerate() {
            if let Some(row) = row {
                let sum: T = row.iter().copied().sum();
                if row.iter().any(|&p| p < T::zero()) || (sum - T::one()).abs() > renorm_tol::<T>() {
                    return bad(format!("robot policy row for cell {cell} is not a distribution"));
                }
            }
        }
        if self.mask_costs.len() != self.sensors.len() {
            return bad(format!(
                "{} mask costs for {} sensors",
                self.mask_costs.len(),
                self.sensors.len()
            ));
        }
        Ok(())
    }

    /// Compiles the gridworld into a [`SensorScenario`].
    pub fn to_scenario(&self) -> Result<SensorScenario<T>> {
        self.validate()?;
        let n = self.n_cells();
        let walls: BTreeSet<_> = self.walls.iter().copied().collect();
        let sinks: BTreeSet<_> = self.hazards.iter().chain(&self.absorbing).chain(&self.walls).copied().collect();

        // Every cell needs a row; undefined policy rows are only an error when reachable.
        let mut transition = vec![vec![T::zero(); n]; n];
        let mut undefined = Vec::new();
        for cell in 0..n {
            if sinks.contains(&cell) {
                transition[cell][cell] = T::one();
                continue;
            }
            match &self.robot_policy[cell] {
                Some(row) => {
                    for m in Move::ALL {
                        let w = row[m.index()];
                        if w == T::zero() {
                            continue;
                        }
                        for (next, p) in self.move_distribution(cell, m, &walls) {
                            transition[cell][next] += w * p;
                        }
                    }
                }
                None => {
                    transition[cell][cell] = T::one();
                    undefined.push(cell);
                }
            }
        }
        let mut reachable = vec![false; n];
        let mut stack: Vec<usize> = self.initial_cells.clone();
        while let Some(c) = stack.pop() {
            if std::mem::replace(&mut reachable[c], true) {
                continue;
            }
            for (next, &p) in transition[c].iter().enumerate() {
                if p > T::zero() && !reachable[next] {
                    stack.push(next);
                }
            }
        }
        if let Some(&cell) = undefined.iter().find(|&&c| reachable[c]) {
            return Err(Error::InvalidPolicyRow { cell });
        }

        let mut initial_dist = vec![T::zero(); n];
        let w = T::one() / lit(self.initial_cells.len() as f64);
        for &c in &self.initial_cells {
            initial_dist[c] += w;
        }
        let names: Vec<&str> = self.sensors.iter().map(|s| s.name.as_str()).collect();
        let mask_actions = single_sensor_actions(&names);
        let mut base = self.mask_costs.clone();
        base.push(T::zero());
        Ok(SensorScenario {
            states: (0..n).map(|c| c.to_string()).collect(),
            transition,
            sensors: self.sensors.clone(),
            initial_config: mask_actions.len() - 1,
            mask_actions,
            costs: MaskCostRule {
                base,
                repeat_factor: self.repeat_factor,
                no_mask_cost: T::zero(),
            },
            initial_dist,
            secret: self.secrets.clone(),
            horizon: self.horizon,
            discount: self.discount,
            budget: self.budget,
            mask_visible: self.mask_visible,
        })
    }

    /// Swaps rows and columns of the grid and the robot policy.
    pub fn transposed(&self) -> Self {
        let map = |c: usize| (c % self.cols) * self.rows + c / self.cols;
        let map_all = |v: &[usize]| v.iter().map(|&c| map(c)).collect::<Vec<_>>();
        let mut robot_policy = vec![None; self.n_cells()];
        for (c, row) in self.robot_policy.iter().enumerate() {
            robot_policy[map(c)] = row.map(|r| {
                let mut out = [T::zero(); 4];
                for m in Move::ALL {
                    out[m.transposed().index()] = r[m.index()];
                }
                out
            });
        }
        GridworldConfig {
            rows: self.cols,
            cols: self.rows,
            walls: map_all(&self.walls),
            hazards: map_all(&self.hazards),
            secrets: map_all(&self.secrets),
            absorbing: map_all(&self.absorbing),
            sensors: self
                .sensors
                .iter()
                .map(|s| Sensor {
                    coverage: map_all(&s.coverage),
                    ..s.clone()
                })
                .collect(),
            robot_policy,
            initial_cells: map_all(&self.initial_cells),
            ..self.clone()
        }
    }
}

/// Builds the HMM for a gridworld configuration.
pub fn build_gridworld<T: Scalar>(cfg: &GridworldConfig<T>) -> Result<HmmSpec<T>> {
    cfg.to_scenario()?.to_spec()
}

/// A saturated softmax policy choosing `choose(z)` at every augmented state.
/// In state-only mode `choose` is queried at `(s, 0)`.
pub fn deterministic_policy<T: Scalar>(
    mdp: &MaskMdp<T>,
    mode: ConditioningMode,
    choose: impl Fn(usize) -> usize,
) -> PolicyParams<T> {
    let mut p = PolicyParams::zeros(mdp, mode);
    for row in 0..p.n_rows() {
        let z = p.states_of_row(row).start;
        let a = choose(z);
        p.row_mut(row)[a] = lit(SATURATION);
    }
    p
}

/// Always keep every sensor unmasked.
pub fn no_masking_policy<T: Scalar>(mdp: &MaskMdp<T>) -> Result<PolicyParams<T>> {
    let null = mdp
        .null_action()
        .ok_or_else(|| Error::InvalidParameter("model has no configuration that masks nothing".into()))?;
    Ok(deterministic_policy(mdp, ConditioningMode::Augmented, |_| null))
}

/// Masks the sensor covering a secret state whenever the next state can be
/// secret; otherwise masks nothing. Ties go to the lowest sensor index.
pub fn final_state_masking_policy<T: Scalar>(
    scenario: &SensorScenario<T>,
    mdp: &MaskMdp<T>,
) -> Result<PolicyParams<T>> {
    let null = scenario
        .null_action()
        .ok_or_else(|| Error::InvalidParameter("scenario has no configuration that masks nothing".into()))?;
    let mut cover = vec![None; scenario.states.len()];
    for &g in &scenario.secret {
        let sensors: Vec<usize> = scenario.covering(g).collect();
        if sensors.len() > 1 {
            return Err(Error::AmbiguousSecretCoverage {
                state: scenario.states[g].clone(),
            });
        }
        cover[g] = sensors.first().copied();
    }
    let mask_for = |sensor: usize| {
        scenario
            .mask_actions
            .iter()
            .position(|a| a.masks == [sensor])
            .unwrap_or(null)
    };
    let choice: Vec<usize> = (0..scenario.states.len())
        .map(|s| {
            mdp.successors(s)
                .iter()
                .filter(|(s2, p)| *p > T::zero() && scenario.secret.contains(s2))
                .filter_map(|&(s2, _)| cover[s2])
                .min()
                .map_or(null, mask_for)
        })
        .collect();
    Ok(deterministic_policy(mdp, ConditioningMode::Augmented, |z| {
        choice[mdp.from_index(z).0]
    }))
}
